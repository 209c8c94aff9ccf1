"""Provable replay of one round of two-stage detection in fixed point.

The prover quantizes the importance segments, walks a fixed circuit and
records every intermediate value together with the witnesses needed to check
it (square roots, quotients, a Gram matrix). The verifier walks the same
circuit over the revealed vectors: it re-checks each witness with the cheap
gadgets, re-derives the public part of every record, and requires each stored
record to match the rebuilt one exactly. Editing any field of any record,
commitment or claim therefore makes verification fail at that record.

Vectors are bound by SHA-256 commitments over their field encoding; a chain of
transcripts is linked by requiring each round's cached references to match
the commitments published by the round before.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..defense import DefenseParams, DetectionReport, krum_neighbors, round0_krum_params
from ..errors import ProverInconsistencyError, RangeError
from ..io import atomic_write_text
from ..state import ClientUpdate
from .field import DEFAULT_MODULUS, DEFAULT_SCALE_BITS, quantize, quantize_vector, raw_limit
from .gadgets import division_check, freivalds_check, freivalds_cost, isqrt_check

TRANSCRIPT_VERSION = 1
DIGEST = "sha256"
STAGES = ("stage1", "stage2", "cache")


@dataclass(frozen=True)
class ZkParams:
    modulus: int = DEFAULT_MODULUS
    scale_bits: int = DEFAULT_SCALE_BITS
    freivalds_reps: int = 2
    margin_ulps: int = 16
    # allowed gap between a claimed float score and its fixed-point replay
    claim_tolerance: float = 1e-3

    def __post_init__(self):
        if self.freivalds_reps < 1:
            raise ValueError("freivalds_reps must be at least 1")
        if self.scale_bits < 1 or raw_limit(self.scale_bits, self.modulus) < 2:
            raise ValueError("modulus too small for the requested scale")


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    index: Optional[int] = None
    kind: Optional[str] = None
    reason: str = ""

    def __bool__(self):
        return self.accepted


@dataclass
class FixedCache:
    """Fixed-point mirror of the reference cache, carried from round to round."""

    prev_avg: Optional[list] = None
    prev_client: dict = field(default_factory=dict)
    commitments: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PublicInputs:
    """What the verifier already trusts before reading a transcript."""

    gamma: float
    lam: float
    prev_avg: Optional[str] = None
    prev_client: Mapping[int, str] = field(default_factory=dict)
    # None trusts the transcript header; otherwise the header must match exactly
    zk: Optional[ZkParams] = None


def commit(values: Sequence[int], modulus: int = DEFAULT_MODULUS,
           scale_bits: int = DEFAULT_SCALE_BITS) -> str:
    """SHA-256 over ``(modulus, scale, length, little-endian field elements)``."""
    width = (modulus.bit_length() + 7) // 8
    h = hashlib.sha256()
    h.update(modulus.to_bytes(32, "little"))
    h.update(int(scale_bits).to_bytes(4, "little"))
    h.update(len(values).to_bytes(8, "little"))
    for v in values:
        h.update((int(v) % modulus).to_bytes(width, "little"))
    return h.hexdigest()


@dataclass
class VerificationTranscript:
    round: int
    commitments: dict
    gadget_records: list
    claimed_report: dict
    mult_count: int
    header: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    vectors: dict = field(default_factory=dict)
    claimed_reference: Optional[list] = None
    outputs: dict = field(default_factory=dict)
    mult_counts: dict = field(default_factory=dict)
    marginal: bool = False

    def to_dict(self) -> dict:
        return {
            "header": self.header,
            "round": self.round,
            "params": self.params,
            "vectors": self.vectors,
            "commitments": self.commitments,
            "gadget_records": self.gadget_records,
            "claimed_report": self.claimed_report,
            "claimed_reference": self.claimed_reference,
            "outputs": self.outputs,
            "mult_count": self.mult_count,
            "mult_counts": self.mult_counts,
            "marginal": self.marginal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationTranscript":
        return cls(
            round=d["round"], commitments=d["commitments"], gadget_records=d["gadget_records"],
            claimed_report=d["claimed_report"], mult_count=d["mult_count"],
            header=d.get("header", {}), params=d.get("params", {}), vectors=d.get("vectors", {}),
            claimed_reference=d.get("claimed_reference"), outputs=d.get("outputs", {}),
            mult_counts=d.get("mult_counts", {}), marginal=d.get("marginal", False),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VerificationTranscript":
        return cls.from_dict(json.loads(text))

    def copy(self) -> "VerificationTranscript":
        return VerificationTranscript.from_dict(copy.deepcopy(self.to_dict()))


# Backends --------------------------------------------------------------------

class _Reject(Exception):
    def __init__(self, index, kind, reason):
        super().__init__(reason)
        self.index, self.kind, self.reason = index, kind, reason


def _is_int(v) -> bool:
    return type(v) is int


class _ProverBackend:
    def __init__(self):
        self.records: list[dict] = []

    def exchange(self, public: dict, compute=None, check=None, keys=()) -> dict:
        witness = compute() if compute is not None else {}
        if check is not None and not check(witness):
            raise ProverInconsistencyError(f"witness for {public['label']} fails its own check")
        self.records.append({**public, **witness})
        return witness

    def fail(self, reason: str):
        raise ProverInconsistencyError(reason)


class _VerifierBackend:
    def __init__(self, records: list):
        if not isinstance(records, list):
            raise _Reject(None, None, "gadget records are not a list")
        self.records = records
        self.pos = 0

    def exchange(self, public: dict, compute=None, check=None, keys=()) -> dict:
        kind = public["kind"]
        if self.pos >= len(self.records):
            raise _Reject(self.pos, kind, f"transcript ends before {public['label']}")
        rec = self.records[self.pos]
        if not isinstance(rec, dict):
            raise _Reject(self.pos, kind, "record is not an object")
        witness = {k: v for k, v in rec.items() if k not in public}
        if set(witness) != set(keys):
            raise _Reject(self.pos, kind, f"record {public['label']} has unexpected fields")
        try:
            ok = check is None or check(witness)
        except (KeyError, TypeError, ValueError):
            ok = False
        if not ok:
            raise _Reject(self.pos, kind, f"witness check failed for {public['label']}")
        # compare encodings so that, e.g., true and 1 are not interchangeable
        if json.dumps(rec, sort_keys=True) != json.dumps({**public, **witness}, sort_keys=True):
            bad = sorted(k for k in public if rec.get(k) != public[k])
            raise _Reject(self.pos, kind, f"record {public['label']} disagrees on {bad or 'layout'}")
        self.pos += 1
        return witness

    def fail(self, reason: str):
        kind = None
        if self.pos < len(self.records) and isinstance(self.records[self.pos], dict):
            kind = self.records[self.pos].get("kind")
        raise _Reject(self.pos, kind, reason)

    def finish(self):
        if self.pos != len(self.records):
            raise _Reject(self.pos, None, "unexpected trailing records")


# Circuit ---------------------------------------------------------------------

@dataclass
class _Claims:
    flag: bool
    scores: dict
    evilness: dict
    stats: Optional[tuple]
    bound: Optional[float]
    removed: frozenset
    selection: Optional[tuple]


class _Circuit:
    def __init__(self, backend, zk: ZkParams, vectors: dict):
        self.b = backend
        self.zk = zk
        self.vec = dict(vectors)
        self.counts = {s: 0 for s in STAGES}
        self.marginal = False
        self.one = 1 << zk.scale_bits
        self.half = zk.modulus // 2

    def _fits(self, v: int, label: str):
        if abs(v) > self.half:
            self.b.fail(f"{label} overflows the field")

    def _pair(self, a: str, b: str):
        x, y = self.vec[a], self.vec[b]
        if len(x) != len(y):
            self.b.fail(f"{a} and {b} differ in length")
        return x, y

    def dot(self, stage, label, a, b) -> int:
        x, y = self._pair(a, b)
        value = sum(p * q for p, q in zip(x, y))
        self._fits(value, label)
        self.counts[stage] += len(x)
        self.b.exchange({"kind": "dot", "stage": stage, "label": label, "a": a, "b": b,
                         "value": value})
        return value

    def sqdist(self, stage, label, a, b) -> int:
        x, y = self._pair(a, b)
        value = sum((p - q) * (p - q) for p, q in zip(x, y))
        self._fits(value, label)
        self.counts[stage] += len(x)
        self.b.exchange({"kind": "sqdist", "stage": stage, "label": label, "a": a, "b": b,
                         "value": value})
        return value

    def sumsq(self, stage, label, values, center) -> int:
        value = sum((v - center) * (v - center) for v in values)
        self._fits(value, label)
        self.counts[stage] += len(values)
        self.b.exchange({"kind": "sumsq", "stage": stage, "label": label,
                         "values": list(values), "center": center, "value": value})
        return value

    def product(self, stage, label, a, b) -> int:
        value = a * b
        self._fits(value, label)
        self.counts[stage] += 1
        self.b.exchange({"kind": "product", "stage": stage, "label": label, "a": a, "b": b,
                         "value": value})
        return value

    def isqrt(self, stage, label, y) -> int:
        if y < 0:
            self.b.fail(f"{label}: square root of a negative value")
        w = self.b.exchange(
            {"kind": "sqrt", "stage": stage, "label": label, "y": y},
            lambda: {"x": math.isqrt(y)},
            lambda w: _is_int(w["x"]) and isqrt_check(y, w["x"]), ("x",))
        self.counts[stage] += 2
        return w["x"]

    @staticmethod
    def _divides(a, b, q, r) -> bool:
        if not (_is_int(q) and _is_int(r)):
            return False
        if (a >= 0 and q < 0) or (a < 0 and q > 0):
            return False
        return division_check(abs(a), b, abs(q), r)

    def divide(self, stage, label, a, b) -> int:
        """Quotient truncated toward zero; ``b`` must be positive."""
        if b <= 0:
            self.b.fail(f"{label}: non-positive divisor")

        def compute():
            q, r = divmod(abs(a), b)
            return {"q": q if a >= 0 else -q, "r": r}

        w = self.b.exchange({"kind": "division", "stage": stage, "label": label, "a": a, "b": b},
                            compute, lambda w: self._divides(a, b, w["q"], w["r"]), ("q", "r"))
        self.counts[stage] += 1
        return w["q"]

    def mean_vector(self, stage, label, names, out):
        """Elementwise truncated mean of named vectors, stored under ``out``."""
        rows = [self.vec[n] for n in names]
        if len({len(r) for r in rows}) != 1:
            self.b.fail(f"{label}: vectors differ in length")
        sums = [sum(col) for col in zip(*rows)]
        b = len(rows)

        def compute():
            q, r = [], []
            for a in sums:
                qq, rr = divmod(abs(a), b)
                q.append(qq if a >= 0 else -qq)
                r.append(rr)
            return {"q": q, "r": r}

        def check(w):
            q, r = w["q"], w["r"]
            return (isinstance(q, list) and isinstance(r, list) and len(q) == len(sums) == len(r)
                    and all(self._divides(a, b, qq, rr) for a, qq, rr in zip(sums, q, r)))

        w = self.b.exchange({"kind": "vector_division", "stage": stage, "label": label,
                             "rows": list(names), "b": b}, compute, check, ("q", "r"))
        self.counts[stage] += len(sums)
        self.vec[out] = list(w["q"])
        return self.vec[out]

    def gram(self, stage, label, names):
        rows = [self.vec[n] for n in names]
        n, k = len(rows), len(rows[0])
        if any(len(r) != k for r in rows):
            self.b.fail(f"{label}: vectors differ in length")
        zk = self.zk

        def compute():
            w = np.array(rows, dtype=object)
            return {"matrix": [[int(v) for v in row] for row in w.dot(w.T)]}

        def check(w):
            c = w["matrix"]
            if not (isinstance(c, list) and len(c) == n
                    and all(isinstance(row, list) and len(row) == n for row in c)):
                return False
            if not all(_is_int(v) and abs(v) <= self.half for row in c for v in row):
                return False
            transposed = [list(col) for col in zip(*rows)]
            return freivalds_check(rows, transposed, c, zk.freivalds_reps, self.rng, zk.modulus)

        w = self.b.exchange({"kind": "freivalds", "stage": stage, "label": label,
                             "rows": list(names), "reps": zk.freivalds_reps},
                            compute, check, ("matrix",))
        self.counts[stage] += freivalds_cost(n, k, n, zk.freivalds_reps)
        return w["matrix"]

    def compare(self, stage, label, lhs, op, rhs, claimed: Optional[bool],
                gated: bool = True) -> bool:
        """``gated=False`` marks a decision the circuit computes but then discards."""
        fixed = lhs < rhs if op == "<" else lhs > rhs
        margin = abs(lhs - rhs)
        marginal = margin < self.zk.margin_ulps
        result = fixed
        if claimed is not None and claimed != fixed:
            if not marginal:
                self.b.fail(f"{label}: claimed decision contradicts the fixed-point replay")
            result = claimed
        self.marginal |= marginal and gated
        self.counts[stage] += 1
        self.b.exchange({"kind": "comparison", "stage": stage, "label": label, "lhs": lhs,
                         "op": op, "rhs": rhs, "result": result, "marginal": marginal})
        return result

    def krum(self, stage, label, g, ids, m, f, claimed: Optional[Sequence[int]]):
        n = len(ids)
        k = krum_neighbors(n, f)
        scores = []
        for i in range(n):
            d = sorted(g[i][i] + g[j][j] - 2 * g[i][j] for j in range(n) if j != i)
            scores.append(sum(d[:k]))
        order = sorted(range(n), key=lambda j: (scores[j], ids[j]))
        selected = sorted(ids[j] for j in order[:m])
        marginal = False
        if claimed is not None and sorted(claimed) != selected:
            pos = {cid: j for j, cid in enumerate(ids)}
            chosen = set(claimed)
            if len(chosen) != m or not chosen <= set(ids):
                self.b.fail(f"{label}: claimed selection is not {m} known clients")
            worst_in = max(scores[pos[c]] for c in chosen)
            best_out = min(scores[pos[c]] for c in ids if c not in chosen)
            slack = self.zk.margin_ulps * k * (math.isqrt(max(worst_in, 0))
                                               + math.isqrt(max(best_out, 0)) + 1)
            if worst_in - best_out >= slack:
                self.b.fail(f"{label}: claimed selection contradicts the fixed-point replay")
            selected, marginal = sorted(chosen), True
        self.marginal |= marginal
        self.b.exchange({"kind": "krum", "stage": stage, "label": label, "ids": list(ids),
                         "m": m, "f": f, "neighbors": k, "scores": scores,
                         "selected": selected, "marginal": marginal})
        return selected

    def cosine(self, stage, label, dot, na, nb) -> int:
        if na == 0 or nb == 0:
            return -self.one
        q = self.divide(stage, label + "/over_ref_norm", dot, nb)
        return self.divide(stage, label, q * self.one, na)


def _close(claimed, raw: int, zk: ZkParams) -> bool:
    if claimed is None or isinstance(claimed, bool) or not isinstance(claimed, (int, float)):
        return False
    fixed = raw / float(1 << zk.scale_bits)
    return abs(float(claimed) - fixed) <= zk.claim_tolerance * max(1.0, abs(fixed))


def _run(c: _Circuit, tau: int, ids: list, gamma_fx: int, lambda_fx: int, cl: _Claims) -> list:
    """Walk the detection circuit; returns the survivor ids."""
    zk = c.zk
    gamma = gamma_fx / c.one
    cached = "prev_avg" in c.vec

    # stage 1: cross-round cosine screen
    if tau == 0 or not cached:
        if cl.scores:
            c.b.fail("round without a cached reference carries cross-round scores")
        flag = True
    else:
        if set(cl.scores) != set(ids):
            c.b.fail("cross-round scores do not cover the cohort")
        norm_g = c.isqrt("stage1", "norm/prev_avg", c.dot("stage1", "norm2/prev_avg",
                                                          "prev_avg", "prev_avg"))
        hits = []
        for cid in ids:
            u = f"update/{cid}"
            claimed_g, claimed_s = cl.scores[cid]
            norm_u = c.isqrt("stage1", f"norm/{cid}", c.dot("stage1", f"norm2/{cid}", u, u))
            cos_g = c.cosine("stage1", f"cos/{cid}/global",
                             c.dot("stage1", f"dot/{cid}/global", u, "prev_avg"), norm_u, norm_g)
            if not _close(claimed_g, cos_g, zk):
                c.b.fail(f"claimed global similarity of client {cid} is off")
            hits.append(c.compare("stage1", f"flag/{cid}/global", cos_g, "<", gamma_fx,
                                  claimed_g < gamma))
            p = f"prev_client/{cid}"
            if p not in c.vec:
                if claimed_s is not None:
                    c.b.fail(f"client {cid} has a self similarity but no cached model")
                continue
            norm_p = c.isqrt("stage1", f"norm/{p}", c.dot("stage1", f"norm2/{p}", p, p))
            cos_s = c.cosine("stage1", f"cos/{cid}/self",
                             c.dot("stage1", f"dot/{cid}/self", u, p), norm_u, norm_p)
            if not _close(claimed_s, cos_s, zk):
                c.b.fail(f"claimed self similarity of client {cid} is off")
            hits.append(c.compare("stage1", f"flag/{cid}/self", cos_s, "<", gamma_fx,
                                  claimed_s < gamma))
        flag = any(hits)
    if flag != cl.flag:
        c.b.fail("claimed attack flag contradicts stage 1")

    # stage 2 runs every round, as a fixed circuit would; removals apply only when flagged
    removed: set = set()
    n = len(ids)
    names = [f"update/{cid}" for cid in ids]
    reference = names
    if n >= 3:
        g = c.gram("stage2", "gram/updates", names)
        m, f = round0_krum_params(n)
        claimed = cl.selection if tau == 0 or not cached else None
        chosen = c.krum("stage2", "krum/selection", g, ids, m, f, claimed)
        reference = [f"update/{cid}" for cid in chosen]
    if tau == 0 or not cached:
        c.mean_vector("stage2", "reference/round0", reference, "reference")
    else:
        c.vec["reference"] = c.vec["prev_avg"]
    if flag and set(cl.evilness) != set(ids):
        c.b.fail("claimed evilness does not cover the cohort")
    if not flag and (cl.evilness or cl.stats is not None or cl.bound is not None):
        c.b.fail("unflagged round carries stage-2 claims")
    evil = {}
    for cid in ids:
        sq = c.sqdist("stage2", f"sqdist/{cid}", f"update/{cid}", "reference")
        evil[cid] = c.isqrt("stage2", f"evilness/{cid}", sq)
        if flag and not _close(cl.evilness.get(cid), evil[cid], zk):
            c.b.fail(f"claimed evilness of client {cid} is off")
    if n >= 2:
        mu = c.divide("stage2", "mean", sum(evil.values()), n)
        var = c.divide("stage2", "variance",
                       c.sumsq("stage2", "sumsq", [evil[cid] for cid in ids], mu), n - 1)
        sigma = c.isqrt("stage2", "std_dev", var)
        spread = c.divide("stage2", "lambda_std_dev",
                          c.product("stage2", "lambda_times_std_dev", lambda_fx, sigma), c.one)
        bound = mu + spread
        if flag and (cl.stats is None or not _close(cl.stats[0], mu, zk)
                     or not _close(cl.stats[1], sigma, zk) or not _close(cl.bound, bound, zk)):
            c.b.fail("claimed statistics are off")
        for cid in ids:
            hit = c.compare("stage2", f"remove/{cid}", evil[cid], ">", bound,
                            cid in cl.removed if flag else None, gated=flag)
            if flag and hit:
                removed.add(cid)
    if removed != set(cl.removed):
        c.b.fail("claimed removals contradict the replay")
    survivors = [cid for cid in ids if cid not in removed]
    if not survivors:
        c.b.fail("every update was removed")

    # cache refresh: truncated mean of surviving segments
    c.mean_vector("cache", "cache/new_avg", [f"update/{cid}" for cid in survivors], "new_avg")
    return survivors


def _claims(report: DetectionReport, selection) -> _Claims:
    stats = None if report.stats is None else (report.stats.mean, report.stats.std_dev)
    return _Claims(report.attack_flag, dict(report.cross_round_scores), dict(report.evilness),
                   stats, report.bound, frozenset(report.removed),
                   None if selection is None else tuple(selection))


# Prover ----------------------------------------------------------------------

def prove_detection(updates: Sequence[ClientUpdate], fixed_cache: FixedCache, tau: int,
                    report: DetectionReport, params: DefenseParams,
                    krum_selection: Optional[Sequence[int]] = None,
                    zk: ZkParams = ZkParams(), rng: Optional[np.random.Generator] = None):
    """Build the transcript for a round's detection outcome.

    Returns ``(transcript, next_cache)``. Raises ``ProverInconsistencyError``
    when the claimed outcome cannot be reproduced in fixed point beyond the
    marginal tolerance, and ``RangeError`` when a value does not fit the field.
    """
    s, p = zk.scale_bits, zk.modulus
    ids = sorted(u.client_id for u in updates)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids")
    by_id = {u.client_id: u for u in updates}
    vectors = {f"update/{cid}": _quantize(by_id[cid].importance_segment, zk) for cid in ids}
    if tau >= 1 and fixed_cache.prev_avg is not None:
        vectors["prev_avg"] = list(fixed_cache.prev_avg)
        for cid in ids:
            if cid in fixed_cache.prev_client:
                vectors[f"prev_client/{cid}"] = list(fixed_cache.prev_client[cid])
    gamma_fx = quantize(params.gamma, s, p).signed
    lambda_fx = quantize(params.lam, s, p).signed

    backend = _ProverBackend()
    circuit = _Circuit(backend, zk, vectors)
    circuit.rng = rng if rng is not None else np.random.default_rng()
    selection = krum_selection if tau == 0 or "prev_avg" not in vectors else None
    survivors = _run(circuit, tau, ids, gamma_fx, lambda_fx, _claims(report, selection))

    new_avg = circuit.vec["new_avg"]
    commitments = {name: commit(v, p, s) for name, v in vectors.items()}
    outputs = {"new_avg": commit(new_avg, p, s)}
    transcript = VerificationTranscript(
        round=tau,
        header={"version": TRANSCRIPT_VERSION, "modulus": str(p), "scale_bits": s,
                "digest": DIGEST, "freivalds_reps": zk.freivalds_reps,
                "margin_ulps": zk.margin_ulps, "claim_tolerance": zk.claim_tolerance},
        params={"gamma": params.gamma, "lambda": params.lam,
                "gamma_fx": gamma_fx, "lambda_fx": lambda_fx},
        vectors={**vectors, "new_avg": new_avg},
        commitments=commitments,
        gadget_records=backend.records,
        claimed_report=report.to_dict(),
        claimed_reference=None if selection is None else sorted(int(c) for c in selection),
        outputs=outputs,
        mult_count=sum(circuit.counts.values()),
        mult_counts=dict(circuit.counts),
        marginal=circuit.marginal,
    )
    next_cache = FixedCache(
        prev_avg=list(new_avg),
        prev_client={cid: vectors[f"update/{cid}"] for cid in survivors},
        commitments={"prev_avg": outputs["new_avg"],
                     **{f"prev_client/{cid}": commitments[f"update/{cid}"] for cid in survivors}},
    )
    return transcript, next_cache


def _quantize(values, zk: ZkParams) -> list:
    return quantize_vector(values, zk.scale_bits, zk.modulus)


# Verifier --------------------------------------------------------------------

def _zk_from_header(h: dict) -> ZkParams:
    if h.get("version") != TRANSCRIPT_VERSION or h.get("digest") != DIGEST:
        raise _Reject(None, "header", "unsupported transcript version or digest")
    try:
        return ZkParams(modulus=int(h["modulus"]), scale_bits=int(h["scale_bits"]),
                        freivalds_reps=int(h["freivalds_reps"]),
                        margin_ulps=int(h["margin_ulps"]),
                        claim_tolerance=float(h["claim_tolerance"]))
    except (KeyError, TypeError, ValueError) as e:
        raise _Reject(None, "header", f"malformed header: {e}")


def _check_vectors(t: VerificationTranscript, zk: ZkParams):
    limit = raw_limit(zk.scale_bits, zk.modulus)
    vectors = t.vectors
    if not isinstance(vectors, dict) or not isinstance(t.commitments, dict):
        raise _Reject(None, "commitment", "vectors or commitments missing")
    if set(t.commitments) != set(vectors) - {"new_avg"}:
        raise _Reject(None, "commitment", "committed names do not match revealed vectors")
    for name, values in vectors.items():
        if not (isinstance(values, list) and all(_is_int(v) and abs(v) < limit for v in values)):
            raise _Reject(None, "commitment", f"vector {name} is not a list of in-range integers")
        if name != "new_avg" and commit(values, zk.modulus, zk.scale_bits) != t.commitments[name]:
            raise _Reject(None, "commitment", f"commitment mismatch for {name}")


def _check_public(t: VerificationTranscript, public: PublicInputs, ids: list, zk: ZkParams):
    if public.zk is not None and public.zk != zk:
        raise _Reject(None, "header", "arithmetic parameters differ from the agreed ones")
    if t.params.get("gamma") != public.gamma or t.params.get("lambda") != public.lam:
        raise _Reject(None, "public", "thresholds differ from the agreed parameters")
    if public.prev_avg is None:
        if t.round != 0 and "prev_avg" in t.commitments:
            raise _Reject(None, "public", "unexpected cached average")
        if t.round == 0 and any(n.startswith("prev_") for n in t.commitments):
            raise _Reject(None, "public", "round 0 carries cached references")
        return
    if t.commitments.get("prev_avg") != public.prev_avg:
        raise _Reject(None, "public", "cached average does not match the previous round")
    for cid in ids:
        expect = public.prev_client.get(cid)
        if t.commitments.get(f"prev_client/{cid}") != expect:
            raise _Reject(None, "public", f"cached model of client {cid} does not match")


def verify_detection(transcript, public: Optional[PublicInputs] = None,
                     rng: Optional[np.random.Generator] = None) -> Verdict:
    """Check a transcript; ``public`` pins thresholds and cached commitments."""
    try:
        t = transcript if isinstance(transcript, VerificationTranscript) \
            else VerificationTranscript.from_dict(transcript)
        zk = _zk_from_header(t.header)
        s, p = zk.scale_bits, zk.modulus
        _check_vectors(t, zk)
        ids = sorted(int(n.split("/", 1)[1]) for n in t.vectors if n.startswith("update/"))
        if not ids or any(f"update/{cid}" not in t.vectors for cid in ids):
            raise _Reject(None, "commitment", "no client updates revealed")
        strays = [n for n in t.vectors if n.startswith("prev_client/")
                  and int(n.split("/", 1)[1]) not in ids]
        if strays:
            raise _Reject(None, "commitment", f"cached models for absent clients: {strays}")
        if not _is_int(t.round) or t.round < 0:
            raise _Reject(None, "header", "bad round number")
        gamma, lam = t.params.get("gamma"), t.params.get("lambda")
        gamma_fx = quantize(gamma, s, p).signed
        lambda_fx = quantize(lam, s, p).signed
        if t.params.get("gamma_fx") != gamma_fx or t.params.get("lambda_fx") != lambda_fx:
            raise _Reject(None, "public", "fixed-point thresholds do not match")
        if public is not None:
            _check_public(t, public, ids, zk)
        report = DetectionReport.from_dict(t.claimed_report)
        if report.round != t.round:
            raise _Reject(None, "claim", "claimed report is for another round")
        vectors = {k: v for k, v in t.vectors.items() if k != "new_avg"}
        if t.round == 0 and "prev_avg" in vectors:
            raise _Reject(None, "commitment", "round 0 carries a cached average")
        selection = t.claimed_reference
        if selection is not None and not (isinstance(selection, list)
                                          and all(_is_int(c) for c in selection)):
            raise _Reject(None, "claim", "malformed claimed reference")

        backend = _VerifierBackend(t.gadget_records)
        circuit = _Circuit(backend, zk, vectors)
        circuit.rng = rng if rng is not None else np.random.default_rng()
        _run(circuit, t.round, ids, gamma_fx, lambda_fx, _claims(report, selection))
        backend.finish()
        n_rec = len(t.gadget_records)
        if circuit.vec["new_avg"] != t.vectors.get("new_avg") or \
                t.outputs.get("new_avg") != commit(circuit.vec["new_avg"], p, s):
            raise _Reject(n_rec, "output", "published average does not match the replay")
        if t.mult_counts != circuit.counts or t.mult_count != sum(circuit.counts.values()):
            raise _Reject(n_rec, "cost", "multiplication counts do not match the replay")
        if t.marginal is not circuit.marginal:
            raise _Reject(n_rec, "output", "marginal flag does not match the replay")
        return Verdict(True)
    except _Reject as r:
        return Verdict(False, r.index, r.kind, r.reason)
    except (KeyError, TypeError, ValueError, AttributeError, RangeError) as e:
        return Verdict(False, None, "malformed", f"{type(e).__name__}: {e}")


def public_inputs_from(prev: Optional[VerificationTranscript], gamma: float,
                       lam: float, zk: Optional[ZkParams] = None) -> PublicInputs:
    """Public inputs for the round after ``prev`` (``None`` for round 0)."""
    if prev is None:
        return PublicInputs(gamma, lam, zk=zk)
    removed = set(prev.claimed_report.get("removed", []))
    cached = {}
    for name, digest in prev.commitments.items():
        if name.startswith("update/"):
            cid = int(name.split("/", 1)[1])
            if cid not in removed:
                cached[cid] = digest
    return PublicInputs(gamma, lam, prev.outputs.get("new_avg"), cached, zk)


def verify_chain(transcripts: Sequence[VerificationTranscript], gamma: float, lam: float,
                 rng: Optional[np.random.Generator] = None,
                 zk: Optional[ZkParams] = None) -> list[Verdict]:
    """Verify consecutive rounds, each against the commitments of the one before."""
    verdicts = []
    prev = None
    for t in transcripts:
        verdicts.append(verify_detection(t, public_inputs_from(prev, gamma, lam, zk), rng))
        prev = t
    return verdicts


def save_transcript(t: VerificationTranscript, path) -> None:
    atomic_write_text(path, t.to_json())


def load_transcript(path) -> VerificationTranscript:
    with open(path, encoding="utf-8") as fh:
        return VerificationTranscript.from_json(fh.read())
