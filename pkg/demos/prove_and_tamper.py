"""Prove a few rounds, check them as a chain, then tamper with one.

The server replays detection in fixed point and writes a transcript per
round. Anyone holding the transcripts can re-check every gadget without
retraining; editing any recorded value is caught at that record.

    python demos/prove_and_tamper.py
"""
import dataclasses

import numpy as np

from zkfl.scenario import load_config, run_scenario
from zkfl.zk.transcript import public_inputs_from, verify_chain, verify_detection

cfg = load_config("configs/ppv.yaml")
cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, rounds=5))
res = run_scenario(cfg, write=False)
chain = [r.transcript for r in res.rounds]

for r, t in zip(res.rounds, chain):
    print(f"round {r.round}: flag {r.report.attack_flag}, removed {sorted(r.report.removed)}, "
          f"{len(t.gadget_records)} records, mults {t.mult_counts}")

verdicts = verify_chain(chain, cfg.params.gamma, cfg.params.lam, np.random.default_rng(0), cfg.zk)
print("\nchain verified:", all(verdicts))

forged = chain[3].copy()
idx = next(i for i, rec in enumerate(forged.gadget_records)
           if rec["kind"] == "comparison" and rec["label"].startswith("remove/"))
forged.gadget_records[idx]["result"] = not forged.gadget_records[idx]["result"]
v = verify_detection(forged, public_inputs_from(chain[2], cfg.params.gamma, cfg.params.lam, cfg.zk))
print(f"flipped one removal decision: accepted={v.accepted}, record {v.index} ({v.kind}): {v.reason}")

hidden = chain[3].copy()
hidden.claimed_report["removed"] = []
v = verify_detection(hidden,
                     public_inputs_from(chain[2], cfg.params.gamma, cfg.params.lam, cfg.zk))
print(f"claimed nobody was removed: accepted={v.accepted}: {v.reason}")
