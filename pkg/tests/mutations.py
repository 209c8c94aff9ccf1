"""Single-leaf transcript mutations for tamper tests.

Every mutation changes exactly one scalar somewhere in the transcript's JSON
form and is guaranteed to change its encoding. Float score claims (similarities,
evilness, statistics) are checked against the replay only up to the claim
tolerance, so they are not mutation targets.
"""
from __future__ import annotations

import copy
import json
import string
import struct

from zkfl.zk.transcript import VerificationTranscript

TOP_TARGETS = ("gadget_records", "vectors", "commitments", "outputs", "header", "params",
               "round", "mult_count", "mult_counts", "marginal", "claimed_reference",
               "claimed_report")
REPORT_TARGETS = ("attack_flag", "removed", "round")


def _flip_float(v: float, rng) -> float:
    (bits,) = struct.unpack("<Q", struct.pack("<d", v))
    (out,) = struct.unpack("<d", struct.pack("<Q", bits ^ (1 << int(rng.integers(64)))))
    return out


def mutate_value(v, rng):
    if isinstance(v, bool):
        return not v
    if isinstance(v, int):
        return v ^ (1 << int(rng.integers(max(v.bit_length(), 1) + 1)))
    if isinstance(v, float):
        return _flip_float(v, rng)
    if isinstance(v, str):
        i = int(rng.integers(len(v))) if v else 0
        pool = [c for c in string.hexdigits.lower() + "xyz/_" if c != v[i:i + 1]]
        return v[:i] + pool[int(rng.integers(len(pool)))] + v[i + 1:]
    if v is None:
        return 0
    if isinstance(v, list):
        out = list(v)
        if not out:
            return [0]
        i = int(rng.integers(len(out)))
        out[i] = mutate_value(out[i], rng)
        return out
    if isinstance(v, dict):
        out = dict(v)
        key = sorted(out)[int(rng.integers(len(out)))]
        out[key] = mutate_value(out[key], rng)
        return out
    raise TypeError(type(v))


def mutate(t: VerificationTranscript, rng):
    """Return ``(mutant, where)`` with one leaf changed."""
    d = copy.deepcopy(t.to_dict())
    target = TOP_TARGETS[int(rng.integers(len(TOP_TARGETS)))]
    if target == "gadget_records":
        i = int(rng.integers(len(d[target])))
        rec = d[target][i]
        key = sorted(rec)[int(rng.integers(len(rec)))]
        rec[key] = mutate_value(rec[key], rng)
        where = f"record {i} ({rec['kind']}).{key}"
    elif target == "claimed_report":
        key = REPORT_TARGETS[int(rng.integers(len(REPORT_TARGETS)))]
        d[target][key] = mutate_value(d[target][key], rng)
        where = f"claimed_report.{key}"
    else:
        d[target] = mutate_value(d[target], rng)
        where = target
    before = json.dumps(t.to_dict(), sort_keys=True)
    assert json.dumps(d, sort_keys=True) != before
    return VerificationTranscript.from_dict(d), where
