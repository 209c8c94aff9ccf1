"""Command-line entry point: ``zkfl run|compare|verify|sensitivity|print-config``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, ZkflError
from .scenario import (OUTPUT_ROOT_ENV, ScenarioConfig, compare_defenses, load_config,
                       resolve_output_dir, run_scenario, sensitivity)
from .zk.transcript import load_transcript, public_inputs_from, verify_detection


def _load(path) -> ScenarioConfig:
    return ScenarioConfig() if path is None else load_config(path)


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.print_config:
        print(cfg.to_yaml(), end="")
    res = run_scenario(cfg, args.output)
    s = res.summary
    print(f"{s['rounds']} rounds -> {res.output_dir}")
    print(f"final accuracy {s['final_accuracy']:.4f}  success rate {s['success_rate']:.3f}  "
          f"ppv {s['ppv'] if s['ppv'] is not None else 'n/a'}")
    if res.verdicts is not None:
        bad = [i for i, v in enumerate(res.verdicts) if not v]
        print("transcripts: all verified" if not bad else f"transcripts rejected: rounds {bad}")
    return 0 if res.ok else 1


def cmd_compare(args) -> int:
    cfg = _load(args.config)
    defenses = [d.strip() for d in args.defenses.split(",") if d.strip()]
    rows = compare_defenses(cfg, defenses, args.output)
    print(f"{'defense':<12}{'accuracy':>10}{'ppv':>10}{'success':>10}")
    for r in rows:
        ppv = "n/a" if r["ppv"] is None else f"{r['ppv']:.3f}"
        print(f"{r['defense']:<12}{r['final_accuracy']:>10.4f}{ppv:>10}{r['success_rate']:>10.3f}")
    print(f"table -> {resolve_output_dir(cfg, args.output) / 'comparison.csv'}")
    return 0 if all(r["verified"] in (None, True) for r in rows) else 1


def _transcript_files(target: Path) -> list[Path]:
    if target.is_dir():
        files = sorted(target.glob("round_*.json"))
        if not files:
            raise ConfigError(f"{target}: no round_*.json transcripts")
        return files
    return [target]


def cmd_verify(args) -> int:
    target = Path(args.transcript)
    if not target.exists():
        raise ConfigError(f"{target}: no such file or directory")
    rng = np.random.default_rng(args.seed)
    prev = load_transcript(args.previous) if args.previous else None
    ok = True
    for path in _transcript_files(target):
        t = load_transcript(path)
        public = None
        if prev is not None or t.round == 0 or target.is_dir():
            gamma = args.gamma if args.gamma is not None else t.params.get("gamma")
            lam = args.lam if args.lam is not None else t.params.get("lambda")
            public = public_inputs_from(prev, gamma, lam)
        verdict = verify_detection(t, public, rng)
        where = "" if verdict else f" at record {verdict.index} ({verdict.kind}): {verdict.reason}"
        print(f"{path}: {'accepted' if verdict else 'REJECTED'}{where}")
        ok &= bool(verdict)
        prev = t
    return 0 if ok else 1


def cmd_sensitivity(args) -> int:
    cfg = _load(args.config)
    rows = sensitivity(cfg, args.output)
    imp = [r for r in rows if r["importance"]]
    if imp:
        frac = sum(r["above_median"] for r in imp) / len(imp)
        print(f"importance layer above the median layer norm in {frac:.1%} of "
              f"{len(imp)} (round, client) pairs")
    else:
        print("single-layer model: the importance layer is the whole vector")
    print(f"norms -> {resolve_output_dir(cfg, args.output) / 'sensitivity.csv'}")
    return 0


def cmd_print_config(args) -> int:
    print(_load(args.config).to_yaml(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zkfl",
        description="Federated-learning poisoning detection with verifiable transcripts.",
        epilog=f"Relative output directories are placed under ${OUTPUT_ROOT_ENV} when set.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", nargs="?")
    r.add_argument("--output", help="output directory (overrides output_dir)")
    r.add_argument("--print-config", action="store_true", help="echo the resolved config first")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run one scenario per defense on shared seeds")
    c.add_argument("config", nargs="?")
    c.add_argument("--defenses", required=True, help="comma-separated defense names")
    c.add_argument("--output")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="verify a transcript file or a directory of them")
    v.add_argument("transcript")
    v.add_argument("--previous", help="transcript of the preceding round, to check the link")
    v.add_argument("--gamma", type=float, help="expected gamma (default: as recorded)")
    v.add_argument("--lambda", dest="lam", type=float, help="expected lambda (default: as recorded)")
    v.add_argument("--seed", type=int, default=None, help="verifier randomness seed")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sensitivity", help="per-layer gradient norms over a run")
    s.add_argument("config", nargs="?")
    s.add_argument("--output")
    s.set_defaults(func=cmd_sensitivity)

    pc = sub.add_parser("print-config", help="print the fully resolved config")
    pc.add_argument("config", nargs="?")
    pc.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ZkflError, OSError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
