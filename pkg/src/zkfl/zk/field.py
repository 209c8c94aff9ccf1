"""Prime-field elements and the fixed-point encoding of reals into them.

A real ``x`` becomes the field element ``round(x * 2**s) mod p``; negative values
wrap to ``p - |raw|``. Rounding is half away from zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RangeError

MERSENNE_61 = 2**61 - 1
BN254_SCALAR = 21888242871839275222246405745257275088548364400416034343698204186575808495617
DEFAULT_MODULUS = MERSENNE_61
DEFAULT_SCALE_BITS = 16


@dataclass(frozen=True)
class FieldElement:
    value: int
    modulus: int = DEFAULT_MODULUS

    def __post_init__(self):
        if not 0 <= self.value < self.modulus:
            raise RangeError(f"{self.value} is not reduced modulo {self.modulus}")

    @classmethod
    def of(cls, x: int, modulus: int = DEFAULT_MODULUS) -> "FieldElement":
        return cls(int(x) % modulus, modulus)

    def _other(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.modulus != self.modulus:
                raise ValueError("operands live in different fields")
            return other.value
        return int(other) % self.modulus

    def __add__(self, other):
        return FieldElement((self.value + self._other(other)) % self.modulus, self.modulus)

    def __sub__(self, other):
        return FieldElement((self.value - self._other(other)) % self.modulus, self.modulus)

    def __mul__(self, other):
        return FieldElement((self.value * self._other(other)) % self.modulus, self.modulus)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement((-self.value) % self.modulus, self.modulus)

    @property
    def signed(self) -> int:
        """Centered representative in ``(-p/2, p/2]``."""
        return to_signed(self.value, self.modulus)


def to_signed(v: int, modulus: int) -> int:
    v %= modulus
    return v - modulus if v > modulus // 2 else v


def raw_limit(scale_bits: int, modulus: int) -> int:
    """Exclusive bound on ``|round(x * 2**s)|`` accepted by ``quantize``."""
    return 2 ** (modulus.bit_length() - 2 - scale_bits - 1)


@dataclass(frozen=True)
class FixedPoint:
    raw: FieldElement
    scale_bits: int = DEFAULT_SCALE_BITS

    @property
    def signed(self) -> int:
        return self.raw.signed

    def __float__(self):
        return dequantize(self)


def _round_half_away(scaled):
    return np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)


def quantize(x: float, s: int = DEFAULT_SCALE_BITS, p: int = DEFAULT_MODULUS) -> FixedPoint:
    if not np.isfinite(x):
        raise RangeError(f"cannot quantize {x}")
    raw = int(_round_half_away(np.float64(x) * 2.0 ** s))
    if abs(raw) >= raw_limit(s, p):
        raise RangeError(f"{x} does not fit {s} fractional bits modulo a {p.bit_length()}-bit prime")
    return FixedPoint(FieldElement.of(raw, p), s)


def dequantize(fx: FixedPoint) -> float:
    return fx.signed / 2.0 ** fx.scale_bits


def quantize_vector(values, s: int = DEFAULT_SCALE_BITS, p: int = DEFAULT_MODULUS) -> list[int]:
    """Signed raw integers for a real vector (field reduction left to the caller)."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise RangeError("cannot quantize non-finite values")
    raw = _round_half_away(arr * 2.0 ** s)
    if raw.size and np.abs(raw).max() >= raw_limit(s, p):
        raise RangeError(f"vector entry exceeds the {s}-bit fixed-point range")
    return [int(v) for v in raw.astype(np.int64)]
