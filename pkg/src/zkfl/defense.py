"""Two-stage anomaly detection and the robust-aggregation baselines.

Stage 1 (cross-round) compares every submission against cached reference
models with cosine similarity and only raises a flag. Stage 2 (cross-client)
runs when the flag is up: each update gets an L2 "evilness" score against the
previous round's average, and scores above ``mu + lambda * sigma`` are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (AllRemovedSignal, DegenerateVectorError, DimensionError,
                     EmptyAggregationError, InsufficientClientsError)
from .state import ClientUpdate, ReferenceCache
from .tensor import ScoreStats, cosine_similarity, l2_distance, sample_stats

DEFENSES = ("none", "two_stage", "krum", "m_krum", "rfa", "foolsgold")

# Similarity reported when a vector has zero norm; always below any valid gamma.
DEGENERATE_SIMILARITY = -1.0


@dataclass(frozen=True)
class DefenseParams:
    gamma: float = 0.5
    lam: float = 0.5
    krum_m: Optional[int] = None
    krum_f: Optional[int] = None

    def __post_init__(self):
        if not -1.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (-1, 1)")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class DetectionReport:
    round: int
    attack_flag: bool
    cross_round_scores: Mapping[int, tuple[float, Optional[float]]] = field(default_factory=dict)
    evilness: Mapping[int, float] = field(default_factory=dict)
    stats: Optional[ScoreStats] = None
    bound: Optional[float] = None
    removed: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "attack_flag": self.attack_flag,
            "cross_round_scores": {
                str(cid): {"sim_to_prev_global": g, "sim_to_prev_self": s}
                for cid, (g, s) in sorted(self.cross_round_scores.items())
            },
            "evilness": {str(cid): v for cid, v in sorted(self.evilness.items())},
            "stats": None if self.stats is None else {
                "mean": self.stats.mean, "std_dev": self.stats.std_dev, "count": self.stats.count},
            "bound": self.bound,
            "removed": sorted(self.removed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        stats = d.get("stats")
        return cls(
            round=int(d["round"]),
            attack_flag=bool(d["attack_flag"]),
            cross_round_scores={
                int(cid): (v["sim_to_prev_global"], v["sim_to_prev_self"])
                for cid, v in d.get("cross_round_scores", {}).items()
            },
            evilness={int(cid): float(v) for cid, v in d.get("evilness", {}).items()},
            stats=None if stats is None else ScoreStats(
                float(stats["mean"]), float(stats["std_dev"]), int(stats["count"])),
            bound=d.get("bound"),
            removed=frozenset(int(c) for c in d.get("removed", [])),
        )


def _safe_cosine(a, b) -> float:
    try:
        return cosine_similarity(a, b)
    except DegenerateVectorError:
        return DEGENERATE_SIMILARITY


def cross_round_check(updates: Sequence[ClientUpdate], cache: ReferenceCache, tau: int,
                      gamma: float):
    """Flag whether an attack may have happened this round.

    Returns ``(attack_possible, scores)`` with ``scores[cid] = (sim_to_prev_global,
    sim_to_prev_self or None)``. Round 0, or a missing global reference, is
    always flagged. Every score is computed even after the first hit so the
    report is complete; nothing is removed here.
    """
    if not updates:
        raise ValueError("no updates to check")
    if tau == 0 or cache.prev_global is None:
        return True, {}
    length = cache.segment_length()
    scores = {}
    flagged = False
    for u in updates:
        seg = u.importance_segment
        if seg.shape[0] != length:
            raise DimensionError(f"client {u.client_id}: segment length {seg.shape[0]} != {length}")
        s_global = _safe_cosine(seg, cache.prev_global)
        prev = cache.prev_client.get(u.client_id)
        s_self = None if prev is None else _safe_cosine(seg, prev)
        scores[u.client_id] = (s_global, s_self)
        if s_global < gamma or (s_self is not None and s_self < gamma):
            flagged = True
    return flagged, scores


def round0_krum_params(n: int) -> tuple[int, int]:
    """(m, f) used for the round-0 approximate average: both ``floor(n / 2)``."""
    return n // 2, n // 2


def reference_average(updates: Sequence[ClientUpdate], cache: ReferenceCache, tau: int):
    """Return ``(w_avg, krum_selection)`` used as the stage-2 reference.

    Round 0 has no cached average, so m-Krum over the current segments stands
    in; cohorts under three updates fall back to the plain mean.
    """
    segs = [u.importance_segment for u in updates]
    if tau >= 1 and cache.prev_avg is not None:
        return cache.prev_avg, None
    if len(updates) < 3:
        return _ordered_mean(np.vstack(segs)), tuple(u.client_id for u in updates)
    m, f = round0_krum_params(len(updates))
    ids = [u.client_id for u in updates]
    selected = krum_select(segs, m, f, ids)
    chosen = [ids.index(cid) for cid in selected]
    return _ordered_mean(np.vstack(segs)[chosen]), selected


def cross_client_detect(updates: Sequence[ClientUpdate], cache: ReferenceCache, tau: int,
                        lam: float):
    """Three-sigma filtering of L2 evilness scores.

    Returns ``(survivors, report)``; the report has ``attack_flag=True``.
    Raises ``AllRemovedSignal`` if nothing would survive.
    """
    if not updates:
        raise ValueError("no updates to score")
    w_avg, _ = reference_average(updates, cache, tau)
    evilness = {u.client_id: l2_distance(u.importance_segment, w_avg) for u in updates}
    if len(updates) < 2:
        stats, bound, removed = None, None, frozenset()
    else:
        stats = sample_stats(list(evilness.values()))
        bound = stats.mean + lam * stats.std_dev
        removed = frozenset(cid for cid, score in evilness.items() if score > bound)
    report = DetectionReport(round=tau, attack_flag=True, evilness=evilness,
                             stats=stats, bound=bound, removed=removed)
    survivors = [u for u in updates if u.client_id not in removed]
    if not survivors:
        raise AllRemovedSignal(report)
    return survivors, report


def two_stage_defense(updates: Sequence[ClientUpdate], cache: ReferenceCache, tau: int,
                      params: DefenseParams):
    flagged, scores = cross_round_check(updates, cache, tau, params.gamma)
    if not flagged:
        return list(updates), DetectionReport(round=tau, attack_flag=False,
                                              cross_round_scores=scores)
    try:
        survivors, report = cross_client_detect(updates, cache, tau, params.lam)
    except AllRemovedSignal as signal:
        rep = signal.report
        signal.report = DetectionReport(rep.round, True, scores, rep.evilness, rep.stats,
                                        rep.bound, rep.removed)
        raise
    report = DetectionReport(report.round, True, scores, report.evilness, report.stats,
                             report.bound, report.removed)
    return survivors, report


# Aggregators -----------------------------------------------------------------

def _stack(updates) -> tuple[np.ndarray, list[int]]:
    if len(updates) == 0:
        raise EmptyAggregationError("nothing to aggregate")
    if isinstance(updates[0], ClientUpdate):
        vecs = [u.model for u in updates]
        ids = [u.client_id for u in updates]
    else:
        vecs = [np.asarray(u, dtype=np.float64).reshape(-1) for u in updates]
        ids = list(range(len(vecs)))
    if len({v.shape for v in vecs}) != 1:
        raise DimensionError("updates differ in length")
    return np.vstack(vecs), ids


def _ordered_mean(rows: np.ndarray) -> np.ndarray:
    # explicit row-by-row sum: np.add.reduce may switch to pairwise summation when
    # the reduced axis is contiguous, and results must depend only on row order
    acc = np.array(rows[0], dtype=np.float64)
    for row in rows[1:]:
        acc += row
    return acc / rows.shape[0]


def fedavg(updates: Sequence[ClientUpdate], weighted: bool = False) -> np.ndarray:
    """Mean of the update models, in ascending client-id order."""
    if len(updates) == 0:
        raise EmptyAggregationError("fedavg over an empty update set")
    ordered = sorted(updates, key=lambda u: u.client_id)
    rows, _ = _stack(ordered)
    if not weighted:
        return _ordered_mean(rows)
    w = np.array([u.n_samples for u in ordered], dtype=np.float64)
    return (w[:, None] * rows).sum(axis=0) / w.sum()


def pairwise_sq_distances(rows: np.ndarray) -> np.ndarray:
    diff = rows[:, None, :] - rows[None, :, :]
    return (diff ** 2).sum(axis=-1)


def krum_neighbors(n: int, f: int) -> int:
    """Number of nearest neighbours summed into a Krum score, clamped to >= 1."""
    return max(1, n - f - 2)


def krum_scores(updates, f: int) -> np.ndarray:
    rows, _ = _stack(updates)
    n = rows.shape[0]
    if n < 3:
        raise InsufficientClientsError(f"Krum needs at least 3 updates, got {n}")
    k = krum_neighbors(n, f)
    d = pairwise_sq_distances(rows)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(d[i], i))
        scores[i] = others[:k].sum()
    return scores


def krum_score(updates, i: int, m: int, f: int) -> float:
    """Sum of the ``L - f - 2`` smallest squared distances from update ``i``.

    ``m`` only affects selection, not the score; it is accepted to mirror the
    aggregation signature.
    """
    return float(krum_scores(updates, f)[i])


def krum_select(updates, m: int, f: int, ids: Optional[Sequence[int]] = None) -> tuple[int, ...]:
    """Ids of the ``m`` lowest-scoring updates, ties broken by lower id."""
    rows, default_ids = _stack(updates)
    ids = list(default_ids if ids is None else ids)
    scores = krum_scores(rows, f)
    m = max(1, min(int(m), rows.shape[0]))
    order = sorted(range(len(ids)), key=lambda j: (scores[j], ids[j]))
    return tuple(sorted(ids[j] for j in order[:m]))


def krum_aggregate(updates, m: Optional[int] = None, f: Optional[int] = None) -> np.ndarray:
    """m-Krum: average of the ``m`` (default ``floor(L/2)``) lowest-scoring updates.

    ``m=1`` is classic Krum. ``f`` defaults to the largest value with ``L > 2f + 2``.
    """
    rows, ids = _stack(updates)
    n = rows.shape[0]
    if m is None:
        m = max(1, n // 2)
    if f is None:
        f = max(0, (n - 3) // 2)
    selected = krum_select(rows, m, f, ids)
    pos = {cid: j for j, cid in enumerate(ids)}
    return _ordered_mean(rows[[pos[c] for c in selected]])


def rfa_aggregate(updates, max_iters: int = 100, epsilon: float = 1e-6) -> np.ndarray:
    """Geometric median by smoothed Weiszfeld iterations, started at the mean."""
    rows, _ = _stack(updates)
    z = rows.mean(axis=0)
    for _ in range(max_iters):
        dist = np.maximum(epsilon, np.linalg.norm(rows - z, axis=1))
        w = 1.0 / dist
        z_new = (w[:, None] * rows).sum(axis=0) / w.sum()
        moved = np.linalg.norm(z_new - z)
        z = z_new
        if moved < epsilon:
            break
    return z


def foolsgold_weights(history: Mapping[int, np.ndarray], ids: Sequence[int]) -> np.ndarray:
    """Per-client weights in [0, 1] from pairwise cosine similarity of histories."""
    n = len(ids)
    if n == 1:
        return np.ones(1)
    h = np.vstack([np.asarray(history[c], dtype=np.float64) for c in ids])
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cs = (h @ h.T) / np.outer(safe, safe)
    np.fill_diagonal(cs, -np.inf)
    alpha = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    top = alpha.max()
    if top <= 0:
        return np.ones(n)
    alpha = alpha / top
    alpha[alpha == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        alpha = np.log(alpha / (1.0 - alpha)) + 0.5
    alpha[np.isinf(alpha) & (alpha > 0)] = 1.0
    return np.clip(np.nan_to_num(alpha, neginf=0.0), 0.0, 1.0)


def foolsgold_aggregate(updates: Sequence[ClientUpdate], history: Mapping[int, np.ndarray]):
    """Weighted mean of updates, down-weighting clients with look-alike histories.

    Returns ``(aggregate, weights)``; ``history`` must cover every client id.
    """
    rows, ids = _stack(updates)
    missing = [c for c in ids if c not in history]
    if missing:
        raise KeyError(f"no history for clients {missing}")
    w = foolsgold_weights(history, ids)
    if w.sum() <= 0:
        return rows.mean(axis=0), w
    return (w[:, None] * rows).sum(axis=0) / w.sum(), w
