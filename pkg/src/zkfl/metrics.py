"""Detection metrics: modified PPV over removals and per-round flag accuracy."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .defense import DetectionReport
from .errors import UndefinedMetricError


@dataclass(frozen=True)
class ConfusionTally:
    n_tp: int = 0
    n_fp: int = 0
    n_total: int = 0

    def __post_init__(self):
        if min(self.n_tp, self.n_fp, self.n_total) < 0:
            raise ValueError("tally counts must be nonnegative")
        if self.n_tp > self.n_total:
            raise ValueError("more true positives than malicious submissions")

    def merge(self, other: "ConfusionTally") -> "ConfusionTally":
        return ConfusionTally(self.n_tp + other.n_tp, self.n_fp + other.n_fp,
                              self.n_total + other.n_total)

    __add__ = merge


def modified_ppv(t: ConfusionTally) -> float:
    """``TP / (TP + FP + N_total)``; never exceeds 1/2 because ``TP <= N_total``."""
    denom = t.n_tp + t.n_fp + t.n_total
    if denom == 0:
        raise UndefinedMetricError("PPV undefined with no detections and no attacks")
    return float(Fraction(t.n_tp, denom))


def accumulate(report: DetectionReport, attacked: Iterable[int],
               tally: ConfusionTally = ConfusionTally()) -> ConfusionTally:
    attacked = frozenset(attacked)
    removed = frozenset(report.removed)
    return tally.merge(ConfusionTally(len(removed & attacked), len(removed - attacked),
                                      len(attacked)))


def cross_round_success_rate(flags: Iterable[tuple[bool, bool]]) -> float:
    """Fraction of rounds whose predicted attack flag matches the ground truth."""
    flags = list(flags)
    if not flags:
        raise ValueError("no rounds to score")
    return sum(bool(p) == bool(a) for p, a in flags) / len(flags)
