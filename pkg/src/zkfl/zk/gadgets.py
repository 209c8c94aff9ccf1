"""Check-only gadgets: the prover supplies results, these confirm them cheaply."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .field import DEFAULT_MODULUS


def _as_field_matrix(m, p: int) -> np.ndarray:
    arr = np.array([[int(v) % p for v in row] for row in m], dtype=object)
    if arr.ndim != 2:
        raise DimensionError("expected a 2-D matrix")
    return arr


def random_field_vector(n: int, rng: np.random.Generator, p: int = DEFAULT_MODULUS) -> np.ndarray:
    # integers() is capped at int64; wider moduli reduce oversized random bytes
    if p <= 2**62:
        vals = [int(v) for v in rng.integers(0, p, size=n)]
    else:
        bits = p.bit_length() + 64
        vals = [int.from_bytes(rng.bytes((bits + 7) // 8), "little") % p for _ in range(n)]
    return np.array(vals, dtype=object)


def freivalds_check(a, b, c, reps: int, rng: np.random.Generator,
                    p: int = DEFAULT_MODULUS) -> bool:
    """Accept iff ``A (B v) == C v`` for ``reps`` uniform field vectors ``v``.

    A wrong ``C`` slips through with probability at most ``p ** -reps``.
    """
    a, b, c = (_as_field_matrix(m, p) for m in (a, b, c))
    n, k = a.shape
    if b.shape[0] != k or c.shape != (n, b.shape[1]):
        raise DimensionError(f"cannot check {a.shape} x {b.shape} = {c.shape}")
    for _ in range(reps):
        v = random_field_vector(b.shape[1], rng, p)
        bv = (b.dot(v)) % p
        if not np.array_equal((a.dot(bv)) % p, (c.dot(v)) % p):
            return False
    return True


def freivalds_cost(n: int, k: int, m: int, reps: int) -> int:
    """Field multiplications spent by ``freivalds_check`` on ``(n x k)(k x m)``."""
    return reps * (k * m + n * k + n * m)


def division_check(a: int, b: int, q: int, r: int) -> bool:
    """Accept iff ``a == q * b + r`` with ``0 <= r < b`` over the integers."""
    if b <= 0 or a < 0 or q < 0:
        return False
    return 0 <= r < b and a == q * b + r


def isqrt_check(y: int, x: int) -> bool:
    """Accept iff ``x == floor(sqrt(y))``: ``x*x <= y < (x+1)*(x+1)``."""
    if y < 0 or x < 0:
        return False
    return x * x <= y < (x + 1) * (x + 1)
