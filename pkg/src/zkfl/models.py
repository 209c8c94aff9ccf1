"""Softmax regression and a one-hidden-layer tanh MLP over flat parameter vectors.

Each layer stores its weight matrix with the bias folded in as an extra
input row, so a layer of ``fan_in -> fan_out`` has shape ``(fan_in + 1, fan_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import LayeredModel


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n_features: int
    n_classes: int
    hidden: int = 64

    def __post_init__(self):
        if self.kind not in ("logistic_regression", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def layer_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        d, c, h = self.n_features, self.n_classes, self.hidden
        if self.kind == "logistic_regression":
            return [("linear", (d + 1, c))]
        return [("hidden", (d + 1, h)), ("output", (h + 1, c))]

    @property
    def n_params(self) -> int:
        return sum(a * b for _, (a, b) in self.layer_shapes)

    def layered(self, params=None) -> LayeredModel:
        return LayeredModel(self.layer_shapes, params)

    def importance_slice(self) -> slice:
        return self.layered().importance_spec().extent

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "logistic_regression":
            return np.zeros(self.n_params)
        parts = []
        for _, (fan_in_plus_bias, fan_out) in self.layer_shapes:
            fan_in = fan_in_plus_bias - 1
            w = rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            parts.append(np.vstack([w, np.zeros((1, fan_out))]).ravel())
        return np.concatenate(parts)


def _unpack(spec: ModelSpec, params: np.ndarray):
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise DimensionError(f"expected {spec.n_params} parameters, got {params.shape}")
    mats = []
    offset = 0
    for _, (a, b) in spec.layer_shapes:
        mats.append(params[offset:offset + a * b].reshape(a, b))
        offset += a * b
    return mats


def _affine(x, m):
    return x @ m[:-1] + m[-1]


def logits(spec: ModelSpec, params, x) -> np.ndarray:
    mats = _unpack(spec, params)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.n_features:
        raise DimensionError(f"expected inputs with {spec.n_features} features")
    if spec.kind == "logistic_regression":
        return _affine(x, mats[0])
    return _affine(np.tanh(_affine(x, mats[0])), mats[1])


def predict(spec: ModelSpec, params, x) -> np.ndarray:
    return np.argmax(logits(spec, params, x), axis=1)


def _softmax_xent(z, y):
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    return loss, dz / n


def loss_and_grad(spec: ModelSpec, params, x, y, weight_decay: float = 0.0):
    """Mean cross-entropy (plus optional L2 penalty) and its gradient."""
    mats = _unpack(spec, params)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if spec.kind == "logistic_regression":
        loss, dz = _softmax_xent(_affine(x, mats[0]), y)
        grads = [np.vstack([x.T @ dz, dz.sum(axis=0)])]
    else:
        a = np.tanh(_affine(x, mats[0]))
        loss, dz = _softmax_xent(_affine(a, mats[1]), y)
        g_out = np.vstack([a.T @ dz, dz.sum(axis=0)])
        da = (dz @ mats[1][:-1].T) * (1.0 - a ** 2)
        g_hid = np.vstack([x.T @ da, da.sum(axis=0)])
        grads = [g_hid, g_out]
    grad = np.concatenate([g.ravel() for g in grads])
    if weight_decay:
        loss += 0.5 * weight_decay * float(params @ params)
        grad = grad + weight_decay * np.asarray(params)
    return float(loss), grad
