"""Synchronous FedAvg rounds: local SGD, attacks, defense, aggregation, cache, proofs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import BackdoorSpec, LabeledDataset, apply_trigger, inject_backdoor
from .defense import (DEFENSES, DefenseParams, DetectionReport, _ordered_mean, fedavg,
                      foolsgold_aggregate, krum_select, reference_average, rfa_aggregate,
                      two_stage_defense)
from .errors import AllRemovedSignal, ConfigError, DimensionError
from .models import ModelSpec, loss_and_grad, predict
from .rng import derive_seed, substream
from .state import ClientUpdate, ReferenceCache
from .tensor import param_vector
from .threat import (ThreatPlan, apply_byzantine, apply_free_rider, apply_model_replacement,
                     schedule)
from .zk.transcript import FixedCache, VerificationTranscript, ZkParams, prove_detection


@dataclass(frozen=True)
class TrainConfig:
    n_clients: int = 10
    local_epochs: int = 1
    learning_rate: float = 0.1
    batch_size: int = 32
    rounds: int = 20
    seed: int = 0
    model_kind: str = "logistic_regression"
    hidden: int = 16
    weight_decay: float = 0.0
    weighted_fedavg: bool = False

    def __post_init__(self):
        if self.n_clients < 2:
            raise ValueError("n_clients must be at least 2")
        if self.local_epochs < 0 or self.batch_size < 1 or self.rounds < 1 or self.hidden < 1:
            raise ValueError("local_epochs, batch_size, rounds and hidden must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.model_kind not in ("logistic_regression", "mlp"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")

    def model_spec(self, data: LabeledDataset) -> ModelSpec:
        return ModelSpec(self.model_kind, data.n_features, data.n_classes, self.hidden)


def sgd(spec: ModelSpec, params, shard: LabeledDataset, cfg: TrainConfig, seed: int):
    """Mini-batch SGD; returns ``(params, losses)`` with the full-shard loss
    before training and after each epoch."""
    w = np.array(params, dtype=np.float64)
    if w.shape != (spec.n_params,):
        raise DimensionError(f"expected {spec.n_params} parameters, got {w.shape}")
    rng = np.random.default_rng(seed)
    x, y = shard.features, shard.labels
    losses = [loss_and_grad(spec, w, x, y, cfg.weight_decay)[0]]
    for _ in range(cfg.local_epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grad = loss_and_grad(spec, w, x[idx], y[idx], cfg.weight_decay)
            w -= cfg.learning_rate * grad
        losses.append(loss_and_grad(spec, w, x, y, cfg.weight_decay)[0])
    return w, losses


def local_train(global_model, shard: LabeledDataset, cfg: TrainConfig, client_seed: int,
                client_id: int = 0, round: int = 0) -> ClientUpdate:
    spec = cfg.model_spec(shard)
    w, _ = sgd(spec, global_model, shard, cfg, client_seed)
    return ClientUpdate(client_id, round, w, spec.importance_slice(), len(shard))


def evaluate(spec: ModelSpec, model, testset: LabeledDataset,
             trigger_set: Optional[LabeledDataset] = None, target_label: Optional[int] = None):
    """Top-1 accuracy, plus the fraction of trigger rows sent to ``target_label``."""
    acc = float(np.mean(predict(spec, model, testset.features) == testset.labels))
    if trigger_set is None or target_label is None or len(trigger_set) == 0:
        return acc, None
    hits = predict(spec, model, trigger_set.features) == target_label
    return acc, float(np.mean(hits))


@dataclass
class RoundResult:
    round: int
    global_model: np.ndarray
    report: DetectionReport
    attacked: frozenset
    attack_actual: bool
    survivors: tuple
    quarantined: bool
    accuracy: float
    backdoor_success: Optional[float]
    train_loss: float
    transcript: Optional[VerificationTranscript] = None
    plain_mean: Optional[np.ndarray] = None


@dataclass
class Simulation:
    """Stateful driver; ``step()`` runs one round, ``run()`` runs them all."""

    cfg: TrainConfig
    shards: Sequence[LabeledDataset]
    testset: LabeledDataset
    threat: ThreatPlan = field(default_factory=ThreatPlan)
    defense: str = "two_stage"
    params: DefenseParams = field(default_factory=DefenseParams)
    verify: bool = False
    zk: ZkParams = field(default_factory=ZkParams)
    keep_plain_mean: bool = False

    def __post_init__(self):
        if len(self.shards) != self.cfg.n_clients:
            raise ConfigError(f"{len(self.shards)} shards for {self.cfg.n_clients} clients")
        if self.defense not in DEFENSES:
            raise ConfigError(f"unknown defense {self.defense!r}")
        if self.verify and self.defense != "two_stage":
            raise ConfigError("verification covers the two_stage defense only")
        if self.verify and self.cfg.weighted_fedavg:
            raise ConfigError("verification assumes uniform FedAvg weights")
        self.threat.validate(self.cfg.n_clients)
        self.spec = self.cfg.model_spec(self.testset)
        self.global_model = param_vector(self.spec.init_params(substream(self.cfg.seed, "init")))
        self.cache = ReferenceCache()
        self.fixed_cache = FixedCache()
        self.tau = 0
        self.history: dict[int, np.ndarray] = {}
        self._setup_backdoor()

    def _setup_backdoor(self):
        self.poisoned: dict[int, LabeledDataset] = {}
        self.trigger_set = None
        if self.threat.attack_kind != "model_replacement":
            return
        bd: BackdoorSpec = self.threat.backdoor
        for cid in sorted(self.threat.malicious_ids):
            seed = derive_seed(self.threat.seed, "backdoor", cid)
            self.poisoned[cid], _ = inject_backdoor(self.shards[cid], bd, seed)
        clean = self.testset.subset(np.flatnonzero(self.testset.labels != bd.target_label))
        self.trigger_set = apply_trigger(clean, bd)

    def _train_all(self, tau):
        updates = []
        for cid, shard in enumerate(self.shards):
            seed = derive_seed(self.cfg.seed, "train", tau, cid)
            updates.append(local_train(self.global_model, shard, self.cfg, seed, cid, tau))
        return updates

    def _attack(self, tau, updates):
        plan = self.threat
        active, targets = schedule(plan, tau, substream(plan.seed, "threat", tau),
                                   self.cfg.n_clients)
        if not active:
            return updates, frozenset()
        out = list(updates)
        for cid in sorted(targets):
            rng = substream(plan.seed, "attack", tau, cid)
            u = out[cid]
            if plan.attack_kind == "byzantine_random":
                out[cid] = apply_byzantine(u, plan.noise_scale, rng, plan.byzantine_mode)
            elif plan.attack_kind == "model_replacement":
                shard = self.poisoned.get(cid, self.shards[cid])
                seed = derive_seed(plan.seed, "backdoor-train", tau, cid)
                bad = local_train(self.global_model, shard, self.cfg, seed, cid, tau).model
                out[cid] = apply_model_replacement(u, self.global_model,
                                                   plan.boost(self.cfg.n_clients), bad)
            elif plan.attack_kind == "free_rider":
                out[cid] = apply_free_rider(u, self.global_model, rng)
        return out, frozenset(targets)

    def _defend(self, tau, updates):
        """Returns ``(aggregate, survivors, report, krum_selection)``."""
        n = len(updates)
        ids = [u.client_id for u in updates]
        weighted = self.cfg.weighted_fedavg
        if self.defense == "none":
            return fedavg(updates, weighted), updates, DetectionReport(tau, False), None
        if self.defense == "two_stage":
            survivors, report = two_stage_defense(updates, self.cache, tau, self.params)
            selection = None
            if report.attack_flag and (tau == 0 or self.cache.prev_avg is None):
                selection = reference_average(updates, self.cache, tau)[1]
            return fedavg(survivors, weighted), survivors, report, selection
        if self.defense in ("krum", "m_krum"):
            if n < 3:
                return fedavg(updates, weighted), updates, DetectionReport(tau, False), None
            m = 1 if self.defense == "krum" else (self.params.krum_m or n // 2)
            f = self.params.krum_f if self.params.krum_f is not None else max(0, (n - 3) // 2)
            chosen = set(krum_select([u.model for u in updates], m, f, ids))
            survivors = [u for u in updates if u.client_id in chosen]
            report = DetectionReport(tau, True, removed=frozenset(set(ids) - chosen))
            return _ordered_mean(np.vstack([u.model for u in survivors])), survivors, report, None
        if self.defense == "rfa":
            return rfa_aggregate(updates), updates, DetectionReport(tau, False), None
        # foolsgold: histories accumulate importance-segment deltas, kept only for
        # clients that received nonzero weight this round
        seg = self.spec.importance_slice()
        zero = np.zeros(seg.stop - seg.start)
        tentative = {u.client_id: self.history.get(u.client_id, zero)
                     + (u.model[seg] - self.global_model[seg]) for u in updates}
        agg, weights = foolsgold_aggregate(updates, tentative)
        for cid, w in zip(ids, weights):
            if w > 0:
                self.history[cid] = tentative[cid]
        return agg, updates, DetectionReport(tau, False), None

    def _refresh_cache(self, new_global, survivors):
        seg = self.spec.importance_slice()
        ordered = sorted(survivors, key=lambda u: u.client_id)
        self.cache = ReferenceCache(
            prev_global=param_vector(new_global[seg]),
            prev_client={u.client_id: param_vector(u.importance_segment) for u in ordered},
            prev_avg=param_vector(_ordered_mean(np.vstack([u.importance_segment
                                                           for u in ordered]))),
        )

    def _train_loss(self, model) -> float:
        total = sum(len(s) for s in self.shards)
        return float(sum(loss_and_grad(self.spec, model, s.features, s.labels)[0] * len(s)
                         for s in self.shards) / total)

    def step(self) -> RoundResult:
        tau = self.tau
        honest = self._train_all(tau)
        updates, attacked = self._attack(tau, honest)
        transcript = None
        quarantined = False
        try:
            new_global, survivors, report, selection = self._defend(tau, updates)
        except AllRemovedSignal as signal:
            new_global, survivors, report, selection = self.global_model, [], signal.report, None
            quarantined = True
        if self.verify and not quarantined:
            transcript, self.fixed_cache = prove_detection(
                updates, self.fixed_cache, tau, report, self.params, selection, self.zk,
                substream(self.cfg.seed, "prover", tau))
        if quarantined:
            self.cache = ReferenceCache(self.cache.prev_global, {}, self.cache.prev_avg)
        else:
            self._refresh_cache(new_global, survivors)
        self.global_model = param_vector(new_global)
        bd = self.threat.backdoor if self.trigger_set is not None else None
        acc, bsucc = evaluate(self.spec, self.global_model, self.testset, self.trigger_set,
                              None if bd is None else bd.target_label)
        result = RoundResult(
            round=tau, global_model=self.global_model, report=report, attacked=attacked,
            attack_actual=bool(attacked), survivors=tuple(u.client_id for u in survivors),
            quarantined=quarantined, accuracy=acc, backdoor_success=bsucc,
            train_loss=self._train_loss(self.global_model), transcript=transcript,
            plain_mean=fedavg(updates, self.cfg.weighted_fedavg) if self.keep_plain_mean else None,
        )
        self.tau += 1
        return result

    def run(self, rounds: Optional[int] = None) -> list[RoundResult]:
        return [self.step() for _ in range(self.cfg.rounds if rounds is None else rounds)]


def run_round(sim: Simulation) -> RoundResult:
    """One round of ``sim``; rounds are consecutive from 0."""
    return sim.step()
