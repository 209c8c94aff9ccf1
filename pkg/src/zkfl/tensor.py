"""Vector math, layered model views and the score statistics used by the defenses.

A parameter vector is a read-only 1-D ``float64`` numpy array. Everything in
here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVectorError, DimensionError, InsufficientSamplesError


def param_vector(values) -> np.ndarray:
    """Build a read-only flat float64 parameter vector.

    Raises ``ValueError`` on empty input or non-finite entries.
    """
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("parameter vector must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def cosine_similarity(a, b) -> float:
    a, b = _pair(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    cos = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, cos))


def l2_distance(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class ScoreStats:
    mean: float
    std_dev: float
    count: int


def sample_stats(scores: Sequence[float]) -> ScoreStats:
    """Mean and sample standard deviation (``n - 1`` denominator).

    ``math.fsum`` is correctly rounded, so any permutation of the input gives
    bit-identical statistics.
    """
    values = [float(s) for s in scores]
    n = len(values)
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 scores, got {n}")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return ScoreStats(mean=mean, std_dev=math.sqrt(var), count=n)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class LayeredModel:
    """Named, shaped layers laid out contiguously over one parameter vector."""

    def __init__(self, layers: Sequence[tuple[str, Sequence[int]]], backing=None):
        specs = []
        offset = 0
        for name, shape in layers:
            shape = tuple(int(d) for d in shape)
            if not shape or any(d <= 0 for d in shape):
                raise ValueError(f"layer {name!r} has invalid shape {shape}")
            spec = LayerSpec(name, shape, offset)
            specs.append(spec)
            offset += spec.size
        if not specs:
            raise ValueError("model needs at least one layer")
        self.layers: tuple[LayerSpec, ...] = tuple(specs)
        self.size = offset
        if backing is None:
            backing = np.zeros(offset)
        backing = param_vector(backing)
        if backing.size != offset:
            raise DimensionError(f"backing has {backing.size} values, layers need {offset}")
        self.backing = backing

    @classmethod
    def from_specs(cls, specs: Sequence[LayerSpec], backing) -> "LayeredModel":
        return cls([(s.name, s.shape) for s in specs], backing)

    def with_backing(self, backing) -> "LayeredModel":
        return LayeredModel.from_specs(self.layers, backing)

    def layer(self, name: str) -> np.ndarray:
        for spec in self.layers:
            if spec.name == name:
                return self.backing[spec.extent]
        raise KeyError(name)

    def slices(self) -> list[np.ndarray]:
        return [self.backing[s.extent] for s in self.layers]

    def importance_spec(self) -> LayerSpec:
        """Second-to-last layer, or the only layer of a single-layer model."""
        if len(self.layers) == 1:
            return LayerSpec(self.layers[0].name, (self.size,), 0)
        return self.layers[-2]

    def __repr__(self):
        body = ", ".join(f"{s.name}{list(s.shape)}" for s in self.layers)
        return f"LayeredModel({body})"


def importance_layer(model: LayeredModel) -> np.ndarray:
    return model.backing[model.importance_spec().extent]


def layer_sensitivity(grads: LayeredModel) -> list[tuple[str, float]]:
    """Per-layer Euclidean norm of a gradient, in layer order."""
    return [(s.name, float(np.linalg.norm(grads.backing[s.extent]))) for s in grads.layers]
