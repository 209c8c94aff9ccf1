"""Desk-scale data: Gaussian blobs, client partitioning, IDX files, backdoor triggers."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, PartitionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    image_shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if feats.shape[0] != labels.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("label out of range")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def generate_blobs(n_classes: int, n_features: int, n_samples: int, seed: int,
                   separation: float = 4.0, scale: float = 1.0) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class.

    Class means are at least ``separation`` apart in units of the within-class
    standard deviation, which is ``scale``; the whole point cloud is multiplied
    by ``scale``, so it sets the feature unit (and inversely the size of fitted
    weights) without changing the geometry. Labels are assigned round-robin
    then shuffled, so class sizes differ by at most one.
    """
    if min(n_classes, n_features, n_samples) <= 0:
        raise ValueError("all counts must be positive")
    if not scale > 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    spread = 1.5 * separation / np.sqrt(2.0 * n_features)
    for _ in range(1000):
        means = rng.normal(scale=spread, size=(n_classes, n_features))
        if n_classes == 1 or _min_pairwise(means) >= separation:
            break
        spread *= 1.05
    else:  # pragma: no cover - unreachable with the growing spread
        raise RuntimeError("could not place class means")
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    features = scale * (means[labels] + rng.normal(size=(n_samples, n_features)))
    return LabeledDataset(features, labels, n_classes)


def _min_pairwise(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(len(points))] = np.inf
    return float(dist.min())


def train_test_split(data: LabeledDataset, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int = 10
    mode: str = "iid"
    alpha: float = 0.5

    def __post_init__(self):
        if self.n_clients <= 0:
            raise ValueError("n_clients must be positive")
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ValueError("dirichlet alpha must be > 0")


def partition_indices(labels, spec: PartitionSpec, seed: int,
                      max_attempts: int = 100) -> list[np.ndarray]:
    """Row indices for each client; shards are disjoint and cover every row."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    k = spec.n_clients
    if k > n:
        raise PartitionError(f"cannot split {n} samples across {k} clients")
    rng = np.random.default_rng(seed)
    if spec.mode == "iid":
        return [np.sort(part) for part in np.array_split(rng.permutation(n), k)]

    classes = np.unique(labels)
    for _ in range(max_attempts):
        shards = [[] for _ in range(k)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet(np.full(k, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for client, part in enumerate(np.split(idx, cuts)):
                shards[client].extend(part.tolist())
        if all(shards):
            return [np.sort(np.array(s, dtype=np.int64)) for s in shards]
    raise PartitionError(
        f"no dirichlet draw gave every client a sample after {max_attempts} attempts")


def partition(data: LabeledDataset, spec: PartitionSpec, seed: int) -> list[LabeledDataset]:
    return [data.subset(idx) for idx in partition_indices(data.labels, spec, seed)]


# IDX format: big-endian u32 magic, big-endian u32 dims, then raw unsigned bytes.

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> tuple[tuple[int, ...], np.ndarray]:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) != count:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header says {count}")
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path, n_classes: int = 10) -> LabeledDataset:
    img_dims, pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    (n_labels,), labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    n_images, rows, cols = img_dims
    if n_images != n_labels:
        raise FormatError(f"{n_images} images but {n_labels} labels")
    if labels.size and labels.max() >= n_classes:
        raise FormatError(f"label {labels.max()} outside {n_classes} classes")
    features = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), n_classes, (rows, cols))


def idx_bytes(data: LabeledDataset) -> tuple[bytes, bytes]:
    """Serialize back to (images, labels) IDX bytes; inverse of ``load_idx``."""
    if data.image_shape is None:
        raise ValueError("dataset has no image shape")
    rows, cols = data.image_shape
    pixels = np.rint(data.features * 255.0).astype(np.uint8)
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, len(data), rows, cols) + pixels.tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, len(data)) + data.labels.astype(np.uint8).tobytes()
    return images, labels


def save_idx(data: LabeledDataset, images_path, labels_path) -> None:
    images, labels = idx_bytes(data)
    Path(images_path).write_bytes(images)
    Path(labels_path).write_bytes(labels)


@dataclass(frozen=True)
class BackdoorSpec:
    trigger_feature_indices: tuple[int, ...] = (0, 1)
    trigger_value: float = 6.0
    target_label: int = 0
    poison_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "trigger_feature_indices",
                           tuple(int(i) for i in self.trigger_feature_indices))
        if not self.trigger_feature_indices:
            raise ValueError("trigger needs at least one feature index")
        if not 0.0 < self.poison_fraction <= 1.0:
            raise ValueError("poison_fraction must be in (0, 1]")


def apply_trigger(data: LabeledDataset, spec: BackdoorSpec) -> LabeledDataset:
    """Stamp the trigger on every row, keeping the clean labels."""
    _check_indices(data, spec)
    feats = data.features.copy()
    feats[:, list(spec.trigger_feature_indices)] = spec.trigger_value
    return replace(data, features=feats)


def _check_indices(data, spec):
    if max(spec.trigger_feature_indices) >= data.n_features or min(spec.trigger_feature_indices) < 0:
        raise ValueError("trigger feature index outside feature dimensionality")
    if not 0 <= spec.target_label < data.n_classes:
        raise ValueError("target label outside class range")


def inject_backdoor(data: LabeledDataset, spec: BackdoorSpec, seed: int):
    """Poison a random ``poison_fraction`` of rows.

    Returns ``(poisoned, trigger_testset)``. The trigger set holds the untouched
    rows whose label is not the target, stamped with the trigger and keeping
    their clean labels; classifying them as the target counts as attack success.
    """
    _check_indices(data, spec)
    n_poison = int(round(spec.poison_fraction * len(data)))
    if n_poison < 1:
        raise ValueError("poison_fraction selects no rows")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(data), size=n_poison, replace=False))
    cols = list(spec.trigger_feature_indices)

    feats = data.features.copy()
    labels = data.labels.copy()
    feats[np.ix_(chosen, cols)] = spec.trigger_value
    labels[chosen] = spec.target_label
    poisoned = replace(data, features=feats, labels=labels)

    rest = np.setdiff1d(np.arange(len(data)), chosen)
    rest = rest[data.labels[rest] != spec.target_label]
    trigger_set = apply_trigger(data.subset(rest), spec)
    return poisoned, trigger_set
