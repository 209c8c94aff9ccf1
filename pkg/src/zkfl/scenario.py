"""Config-driven experiment runs and the files they leave behind.

A run directory holds:

``metrics.csv``
    one row per round, then a ``summary`` row (see ``METRIC_COLUMNS``)
``reports.ndjson``
    one detection report object per round
``summary.json``
    final metrics of the run
``config.yaml``
    the fully resolved configuration
``transcripts/round_NNNN.json``
    verification transcripts, when ``verify`` is on

Every file is written once, through a temp file renamed into place.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .dataset import (BackdoorSpec, LabeledDataset, PartitionSpec, generate_blobs, load_idx,
                      partition, train_test_split)
from .defense import DEFENSES, DefenseParams
from .engine import RoundResult, Simulation, TrainConfig
from .errors import ConfigError, UndefinedMetricError
from .io import atomic_write_csv, atomic_write_ndjson, atomic_write_text
from .metrics import ConfusionTally, accumulate, cross_round_success_rate, modified_ppv
from .models import loss_and_grad
from .rng import derive_seed
from .tensor import layer_sensitivity
from .threat import ThreatPlan
from .zk.field import BN254_SCALAR, MERSENNE_61
from .zk.transcript import ZkParams, save_transcript, verify_chain

OUTPUT_ROOT_ENV = "ZKFL_OUTPUT_ROOT"
METRIC_COLUMNS = ("round", "accuracy", "backdoor_success", "attack_actual", "attack_flag",
                  "n_removed", "ppv_running", "mult_count", "n_attacked", "train_loss",
                  "quarantined", "marginal")
COMPARISON_COLUMNS = ("defense", "final_accuracy", "backdoor_success", "ppv", "success_rate",
                      "verified")
MODULI = {"mersenne61": MERSENNE_61, "bn254": BN254_SCALAR}


@dataclass(frozen=True)
class DataConfig:
    source: str = "blobs"
    n_classes: int = 10
    n_features: int = 50
    n_samples: int = 3000
    separation: float = 4.0
    scale: float = 0.25
    test_fraction: float = 0.25
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("blobs", "idx"):
            raise ValueError(f"unknown data source {self.source!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.source == "idx" and not (self.images and self.labels):
            raise ValueError("idx data needs images and labels paths")
        if (self.test_images is None) != (self.test_labels is None):
            raise ValueError("test_images and test_labels go together")


@dataclass(frozen=True)
class ScenarioConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        rounds=100, learning_rate=1.0, weight_decay=0.015))
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    threat: ThreatPlan = field(default_factory=ThreatPlan)
    defense: str = "two_stage"
    params: DefenseParams = field(default_factory=DefenseParams)
    verify: bool = False
    zk: ZkParams = field(default_factory=ZkParams)
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ConfigError(f"defense: unknown value {self.defense!r}")
        if self.verify and self.defense != "two_stage":
            raise ConfigError("verify: only the two_stage defense produces transcripts")
        # one root seed drives every stream; sections never carry their own
        object.__setattr__(self, "train", dataclasses.replace(self.train, seed=self.seed))
        object.__setattr__(self, "threat", dataclasses.replace(self.threat, seed=self.seed))
        object.__setattr__(self, "partition", dataclasses.replace(
            self.partition, n_clients=self.train.n_clients))

    def with_defense(self, defense: str, output_dir: Optional[str] = None) -> "ScenarioConfig":
        return dataclasses.replace(self, defense=defense,
                                   verify=self.verify and defense == "two_stage",
                                   output_dir=output_dir or self.output_dir)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "defense": self.defense,
            "verify": self.verify,
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "seed"},
            "data": dataclasses.asdict(self.data),
            "partition": {"mode": self.partition.mode, "alpha": self.partition.alpha},
            "threat": {
                "attack_kind": self.threat.attack_kind,
                "malicious_ids": sorted(self.threat.malicious_ids),
                "attack_probability": self.threat.attack_probability,
                "noise_scale": self.threat.noise_scale,
                "boost_factor": self.threat.boost_factor,
                "byzantine_mode": self.threat.byzantine_mode,
                "all_malicious_rounds": self.threat.all_malicious_rounds,
                "backdoor": {**dataclasses.asdict(self.threat.backdoor),
                             "trigger_feature_indices":
                                 list(self.threat.backdoor.trigger_feature_indices)},
            },
            "params": {"gamma": self.params.gamma, "lambda": self.params.lam,
                       "krum_m": self.params.krum_m, "krum_f": self.params.krum_f},
            "zk": {"modulus": _modulus_name(self.zk.modulus),
                   "scale_bits": self.zk.scale_bits,
                   "freivalds_reps": self.zk.freivalds_reps,
                   "margin_ulps": self.zk.margin_ulps,
                   "claim_tolerance": self.zk.claim_tolerance},
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _modulus_name(p: int):
    for name, value in MODULI.items():
        if value == p:
            return name
    return str(p)


def _section(cls, raw, path: str, rename=None, forbid=(), convert=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    rename = rename or {}
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        target = rename.get(key, key)
        if key in forbid or target not in names:
            raise ConfigError(f"{path}.{key}: unknown or disallowed field")
        if convert and target in convert:
            value = convert[target](value)
        kwargs[target] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _modulus(v):
    if isinstance(v, str) and v in MODULI:
        return MODULI[v]
    return int(v)


def config_from_dict(raw: dict, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Build a config; relative idx paths resolve against ``base_dir``."""
    raw = dict(raw or {})
    top = {"seed", "output_dir", "defense", "verify", "train", "data", "partition", "threat",
           "params", "zk"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
    threat_raw = dict(raw.get("threat") or {})
    backdoor = _section(BackdoorSpec, threat_raw.pop("backdoor", None), "threat.backdoor",
                        convert={"trigger_feature_indices": tuple})
    threat = _section(ThreatPlan, threat_raw, "threat", forbid=("seed",),
                      convert={"malicious_ids": frozenset})
    threat = dataclasses.replace(threat, backdoor=backdoor)
    data = _section(DataConfig, raw.get("data"), "data")
    if base_dir is not None:
        paths = {k: str(base_dir / v) for k in ("images", "labels", "test_images", "test_labels")
                 if (v := getattr(data, k)) is not None and not Path(v).is_absolute()}
        data = dataclasses.replace(data, **paths)
    defaults = ScenarioConfig()
    train_raw = {**dataclasses.asdict(defaults.train), **(raw.get("train") or {})}
    train_raw.pop("seed")
    if "seed" in (raw.get("train") or {}):
        raise ConfigError("train.seed: set the top-level seed instead")
    try:
        cfg = ScenarioConfig(
            train=_section(TrainConfig, train_raw, "train"),
            data=data,
            partition=_section(PartitionSpec, raw.get("partition"), "partition",
                               forbid=("n_clients",)),
            threat=threat,
            defense=str(raw.get("defense", defaults.defense)),
            params=_section(DefenseParams, raw.get("params"), "params",
                            rename={"lambda": "lam"}),
            verify=bool(raw.get("verify", False)),
            zk=_section(ZkParams, raw.get("zk"), "zk", convert={"modulus": _modulus}),
            output_dir=str(raw.get("output_dir", defaults.output_dir)),
            seed=int(raw.get("seed", 0)),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    if data.source == "idx":
        for k in ("images", "labels", "test_images", "test_labels"):
            p = getattr(data, k)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"data.{k}: no such file {p}")
    try:
        threat.validate(cfg.train.n_clients)
    except ValueError as e:
        raise ConfigError(f"threat: {e}") from e
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return config_from_dict(raw, path.parent)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def resolve_output_dir(cfg: ScenarioConfig, override: Optional[str] = None) -> Path:
    """``output_dir`` under the root named by ``$ZKFL_OUTPUT_ROOT`` (default: cwd)."""
    out = Path(override or cfg.output_dir)
    if out.is_absolute():
        return out
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out


def build_data(cfg: ScenarioConfig):
    """``(train_shards, testset)`` for a config; depends only on data/partition/seed."""
    d = cfg.data
    if d.source == "blobs":
        full = generate_blobs(d.n_classes, d.n_features, d.n_samples,
                              derive_seed(cfg.seed, "data"), d.separation, d.scale)
        train, test = train_test_split(full, d.test_fraction, derive_seed(cfg.seed, "split"))
    else:
        full = load_idx(d.images, d.labels, d.n_classes)
        if d.test_images is not None:
            train, test = full, load_idx(d.test_images, d.test_labels, d.n_classes)
        else:
            train, test = train_test_split(full, d.test_fraction, derive_seed(cfg.seed, "split"))
        train = LabeledDataset(train.features, train.labels, d.n_classes)
        test = LabeledDataset(test.features, test.labels, d.n_classes)
    shards = partition(train, cfg.partition, derive_seed(cfg.seed, "partition"))
    return shards, test


def make_simulation(cfg: ScenarioConfig, keep_plain_mean: bool = False) -> Simulation:
    shards, test = build_data(cfg)
    return Simulation(cfg.train, shards, test, cfg.threat, cfg.defense, cfg.params,
                      cfg.verify, cfg.zk, keep_plain_mean)


@dataclass
class ScenarioResult:
    summary: dict
    rounds: list
    output_dir: Optional[Path] = None
    verdicts: Optional[list] = None

    @property
    def ok(self) -> bool:
        return self.verdicts is None or all(self.verdicts)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _ppv_or_none(t: ConfusionTally):
    try:
        return modified_ppv(t)
    except UndefinedMetricError:
        return None


def summarize(rounds: Sequence[RoundResult], verdicts=None) -> dict:
    tally = ConfusionTally()
    for r in rounds:
        tally = accumulate(r.report, r.attacked, tally)
    last = rounds[-1]
    costs = [r.transcript.mult_count for r in rounds if r.transcript is not None]
    return {
        "rounds": len(rounds),
        "final_accuracy": last.accuracy,
        "backdoor_success": last.backdoor_success,
        "ppv": _ppv_or_none(tally),
        "n_tp": tally.n_tp, "n_fp": tally.n_fp, "n_total": tally.n_total,
        "success_rate": cross_round_success_rate(
            (r.report.attack_flag, r.attack_actual) for r in rounds),
        "quarantined_rounds": sum(r.quarantined for r in rounds),
        "marginal_rounds": sum(bool(r.transcript and r.transcript.marginal) for r in rounds),
        "mult_count_total": sum(costs) if costs else None,
        "verified": None if verdicts is None else all(verdicts),
    }


def _metric_rows(rounds: Sequence[RoundResult], summary: dict):
    tally = ConfusionTally()
    rows = []
    for r in rounds:
        tally = accumulate(r.report, r.attacked, tally)
        t = r.transcript
        rows.append([_fmt(v) for v in (
            r.round, r.accuracy, r.backdoor_success, r.attack_actual, r.report.attack_flag,
            len(r.report.removed), _ppv_or_none(tally), None if t is None else t.mult_count,
            len(r.attacked), r.train_loss, r.quarantined, None if t is None else t.marginal)])
    rows.append([_fmt(v) for v in (
        "summary", summary["final_accuracy"], summary["backdoor_success"],
        sum(r.attack_actual for r in rounds), sum(r.report.attack_flag for r in rounds),
        sum(len(r.report.removed) for r in rounds), summary["ppv"],
        summary["mult_count_total"], summary["n_total"], rounds[-1].train_loss,
        summary["quarantined_rounds"], summary["marginal_rounds"])])
    return rows


def run_scenario(cfg: ScenarioConfig, output_dir=None, write: bool = True,
                 keep_plain_mean: bool = False) -> ScenarioResult:
    """Run every round, verify transcripts as a chain, and write the run directory."""
    sim = make_simulation(cfg, keep_plain_mean)
    rounds = sim.run()
    verdicts = None
    if cfg.verify:
        verdicts = verify_chain([r.transcript for r in rounds], cfg.params.gamma, cfg.params.lam,
                                np.random.default_rng(derive_seed(cfg.seed, "verifier")), cfg.zk)
    summary = summarize(rounds, verdicts)
    out = None
    if write:
        out = resolve_output_dir(cfg, output_dir)
        atomic_write_text(out / "config.yaml", cfg.to_yaml())
        atomic_write_csv(out / "metrics.csv", METRIC_COLUMNS, _metric_rows(rounds, summary))
        atomic_write_ndjson(out / "reports.ndjson", [r.report.to_dict() for r in rounds])
        for r in rounds:
            if r.transcript is not None:
                save_transcript(r.transcript, out / "transcripts" / f"round_{r.round:04d}.json")
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    return ScenarioResult(summary, rounds, out, verdicts)


def compare_defenses(cfg: ScenarioConfig, defenses: Sequence[str], output_dir=None,
                     write: bool = True) -> list[dict]:
    """One run per defense on the same seeds; rows of ``COMPARISON_COLUMNS``."""
    if not defenses:
        raise ConfigError("no defenses to compare")
    unknown = [d for d in defenses if d not in DEFENSES]
    if unknown:
        raise ConfigError(f"unknown defenses {unknown}")
    out = resolve_output_dir(cfg, output_dir) if write else None
    rows = []
    for d in defenses:
        sub = cfg.with_defense(d)
        res = run_scenario(sub, None if out is None else out / d, write)
        s = res.summary
        rows.append({"defense": d, "final_accuracy": s["final_accuracy"],
                     "backdoor_success": s["backdoor_success"], "ppv": s["ppv"],
                     "success_rate": s["success_rate"], "verified": s["verified"]})
    if write:
        atomic_write_csv(out / "comparison.csv", COMPARISON_COLUMNS,
                         [[_fmt(r[c]) for c in COMPARISON_COLUMNS] for r in rows])
    return rows


def sensitivity(cfg: ScenarioConfig, output_dir=None, write: bool = True) -> list[dict]:
    """Per-layer gradient norms of every client's loss at each round's global model.

    Each row is one (round, client, layer); ``importance`` marks the
    second-to-last layer and ``above_median`` compares its norm with the median
    over that client's layers.
    """
    sim = make_simulation(dataclasses.replace(cfg, verify=False))
    names = [s.name for s in sim.spec.layered().layers]
    rows = []
    for _ in range(cfg.train.rounds):
        for cid, shard in enumerate(sim.shards):
            _, grad = loss_and_grad(sim.spec, sim.global_model, shard.features, shard.labels)
            norms = layer_sensitivity(sim.spec.layered(grad))
            median = float(np.median([v for _, v in norms]))
            for j, (name, value) in enumerate(norms):
                rows.append({"round": sim.tau, "client": cid, "layer": name, "grad_norm": value,
                             "importance": len(names) > 1 and j == len(names) - 2,
                             "above_median": value > median})
        sim.step()
    if write:
        out = resolve_output_dir(cfg, output_dir)
        cols = ("round", "client", "layer", "grad_norm", "importance", "above_median")
        atomic_write_csv(out / "sensitivity.csv", cols,
                         [[_fmt(r[c]) for c in cols] for r in rows])
    return rows
