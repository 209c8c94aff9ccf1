"""Per-round records passed between the engine, threat and defense modules."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .tensor import param_vector


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    round: int
    model: np.ndarray
    importance: slice
    n_samples: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model", param_vector(self.model))

    @property
    def importance_segment(self) -> np.ndarray:
        return self.model[self.importance]

    def with_model(self, model) -> "ClientUpdate":
        return replace(self, model=model)


@dataclass
class ReferenceCache:
    """Reference models kept by the server between rounds (importance segments)."""

    prev_global: Optional[np.ndarray] = None
    prev_client: dict[int, np.ndarray] = field(default_factory=dict)
    prev_avg: Optional[np.ndarray] = None

    def segment_length(self) -> Optional[int]:
        for vec in (self.prev_global, self.prev_avg, *self.prev_client.values()):
            if vec is not None:
                return vec.shape[0]
        return None

    def scaled(self, c: float) -> "ReferenceCache":
        return ReferenceCache(
            None if self.prev_global is None else param_vector(self.prev_global * c),
            {k: param_vector(v * c) for k, v in self.prev_client.items()},
            None if self.prev_avg is None else param_vector(self.prev_avg * c),
        )
