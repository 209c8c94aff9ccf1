"""Poisoning attacks applied to honest client updates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import BackdoorSpec
from .errors import DimensionError
from .state import ClientUpdate

ATTACK_KINDS = ("none", "byzantine_random", "model_replacement", "free_rider")
FREE_RIDER_SCALE = 1e-3


@dataclass(frozen=True)
class ThreatPlan:
    attack_kind: str = "none"
    malicious_ids: frozenset = frozenset()
    attack_probability: float = 1.0
    noise_scale: float = 1.0
    boost_factor: Optional[float] = None  # None -> number of clients
    seed: int = 0
    byzantine_mode: str = "additive"
    all_malicious_rounds: bool = False
    backdoor: BackdoorSpec = field(default_factory=BackdoorSpec)

    def __post_init__(self):
        object.__setattr__(self, "malicious_ids", frozenset(int(i) for i in self.malicious_ids))
        if self.attack_kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.attack_kind!r}")
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ValueError("attack_probability must be in [0, 1]")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.boost_factor is not None and self.boost_factor <= 0:
            raise ValueError("boost_factor must be positive")
        if self.byzantine_mode not in ("additive", "replace"):
            raise ValueError(f"unknown byzantine mode {self.byzantine_mode!r}")

    def validate(self, n_clients: int) -> None:
        """Check ids and the honest-majority assumption for a cohort size."""
        if any(i < 0 or i >= n_clients for i in self.malicious_ids):
            raise ValueError("malicious id outside the client range")
        if not self.all_malicious_rounds and len(self.malicious_ids) * 2 >= n_clients:
            raise ValueError(
                f"{len(self.malicious_ids)} of {n_clients} malicious breaks the honest majority; "
                "set all_malicious_rounds to override")

    def boost(self, n_clients: int) -> float:
        return float(n_clients) if self.boost_factor is None else float(self.boost_factor)


def schedule(plan: ThreatPlan, tau: int, rng: np.random.Generator,
             n_clients: Optional[int] = None) -> tuple[bool, frozenset]:
    """Bernoulli draw of whether this round is attacked, and which clients."""
    if plan.attack_kind == "none":
        return False, frozenset()
    active = bool(rng.random() < plan.attack_probability)
    if not active:
        return False, frozenset()
    if plan.all_malicious_rounds and n_clients is not None:
        return True, frozenset(range(n_clients))
    return True, plan.malicious_ids


def apply_byzantine(update: ClientUpdate, noise_scale: float, rng: np.random.Generator,
                    mode: str = "additive") -> ClientUpdate:
    noise = rng.normal(scale=noise_scale, size=update.model.shape)
    if mode == "additive":
        return update.with_model(update.model + noise)
    if mode == "replace":
        return update.with_model(noise)
    raise ValueError(f"unknown byzantine mode {mode!r}")


def apply_model_replacement(update: ClientUpdate, global_model, boost_factor: float,
                            backdoored_model) -> ClientUpdate:
    """Submit ``global + boost * (backdoored - global)``.

    With ``boost = n`` and every other client returning the global unchanged,
    plain averaging lands exactly on the backdoored model.
    """
    g = np.asarray(global_model, dtype=np.float64)
    b = np.asarray(backdoored_model, dtype=np.float64)
    if g.shape != b.shape or g.shape != update.model.shape:
        raise DimensionError("model replacement operands differ in length")
    return update.with_model(g + boost_factor * (b - g))


def apply_free_rider(update: ClientUpdate, prev_global, rng: np.random.Generator,
                     scale: float = FREE_RIDER_SCALE) -> ClientUpdate:
    g = np.asarray(prev_global, dtype=np.float64)
    if g.shape != update.model.shape:
        raise DimensionError("free-rider reference differs in length")
    return update.with_model(g + rng.normal(scale=scale, size=g.shape))
