import dataclasses

import numpy as np
import pytest

from zkfl.dataset import PartitionSpec, generate_blobs, partition
from zkfl.defense import fedavg
from zkfl.engine import Simulation, TrainConfig, evaluate, local_train, sgd
from zkfl.errors import ConfigError, DimensionError
from zkfl.models import ModelSpec, loss_and_grad, predict
from zkfl.threat import ThreatPlan


def _numeric_grad(spec, w, x, y, wd, eps=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = eps
        g[i] = (loss_and_grad(spec, w + e, x, y, wd)[0]
                - loss_and_grad(spec, w - e, x, y, wd)[0]) / (2 * eps)
    return g


@pytest.mark.parametrize("kind", ["logistic_regression", "mlp"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(0)
    spec = ModelSpec(kind, 4, 3, hidden=5)
    w = rng.normal(size=spec.n_params) * 0.5
    x = rng.normal(size=(7, 4))
    y = rng.integers(0, 3, size=7)
    _, g = loss_and_grad(spec, w, x, y, 0.01)
    np.testing.assert_allclose(g, _numeric_grad(spec, w, x, y, 0.01), atol=1e-6)


def test_model_shapes_and_importance():
    lr = ModelSpec("logistic_regression", 50, 10)
    assert lr.n_params == 510 and lr.importance_slice() == slice(0, 510)
    mlp = ModelSpec("mlp", 50, 10, hidden=16)
    assert mlp.n_params == 51 * 16 + 17 * 10
    assert mlp.importance_slice() == slice(0, 51 * 16)
    with pytest.raises(DimensionError):
        predict(lr, np.zeros(3), np.zeros((1, 50)))


def _data(n_clients=4, seed=0):
    d = generate_blobs(3, 5, 400, seed)
    shards = partition(d.subset(np.arange(300)), PartitionSpec(n_clients), seed)
    return shards, d.subset(np.arange(300, 400))


def test_sgd_reduces_loss_and_is_deterministic():
    shards, _ = _data()
    cfg = TrainConfig(n_clients=4, local_epochs=3)
    spec = cfg.model_spec(shards[0])
    w1, losses = sgd(spec, np.zeros(spec.n_params), shards[0], cfg, seed=5)
    w2, _ = sgd(spec, np.zeros(spec.n_params), shards[0], cfg, seed=5)
    assert losses[-1] < losses[0] and len(losses) == 4
    np.testing.assert_array_equal(w1, w2)


def test_zero_epochs_returns_global():
    shards, _ = _data()
    cfg = TrainConfig(n_clients=4, local_epochs=0)
    g = np.arange(cfg.model_spec(shards[0]).n_params, dtype=float)
    u = local_train(g, shards[0], cfg, 0, client_id=2, round=3)
    np.testing.assert_array_equal(u.model, g)
    assert (u.client_id, u.round, u.n_samples) == (2, 3, len(shards[0]))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(n_clients=1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(model_kind="cnn")


def test_simulation_learns_and_is_reproducible():
    shards, test = _data()
    cfg = TrainConfig(n_clients=4, rounds=5)
    a = Simulation(cfg, shards, test, defense="none").run()
    b = Simulation(cfg, shards, test, defense="none").run()
    assert a[-1].accuracy > 0.9
    assert all(np.array_equal(x.global_model, y.global_model) for x, y in zip(a, b))


@pytest.mark.parametrize("defense", ["two_stage", "krum", "m_krum", "rfa", "foolsgold"])
def test_every_defense_runs(defense):
    shards, test = _data()
    plan = ThreatPlan("byzantine_random", {0}, noise_scale=5.0)
    res = Simulation(TrainConfig(n_clients=4, rounds=3), shards, test, plan, defense).run()
    assert len(res) == 3 and all(r.attacked == {0} for r in res)


def test_cache_holds_survivors_only():
    shards, test = _data(6)
    plan = ThreatPlan("byzantine_random", {0}, noise_scale=50.0)
    sim = Simulation(TrainConfig(n_clients=6, rounds=2), shards, test, plan)
    r = sim.step()
    assert 0 in r.report.removed
    assert set(sim.cache.prev_client) == set(r.survivors)
    np.testing.assert_array_equal(sim.cache.prev_global, r.global_model)


def test_unflagged_round_equals_plain_average():
    shards, test = _data()
    sim = Simulation(TrainConfig(n_clients=4), shards, test, keep_plain_mean=True)
    rounds = sim.run(6)
    quiet = [r for r in rounds if r.round >= 1 and not r.report.attack_flag]
    assert quiet
    for r in quiet:
        np.testing.assert_array_equal(r.global_model, r.plain_mean)


def test_model_replacement_backdoor_without_defense():
    shards, test = _data()
    plan = ThreatPlan("model_replacement", {1}, attack_probability=1.0)
    cfg = TrainConfig(n_clients=4, rounds=4, learning_rate=0.1)
    res = Simulation(cfg, shards, test, plan, "none").run()
    assert res[-1].backdoor_success is not None and res[-1].backdoor_success > 0.5


def test_evaluate_without_trigger():
    shards, test = _data()
    spec = TrainConfig(n_clients=4).model_spec(test)
    acc, b = evaluate(spec, np.zeros(spec.n_params), test)
    assert b is None and 0 <= acc <= 1


def test_simulation_config_errors():
    shards, test = _data()
    with pytest.raises(ConfigError):
        Simulation(TrainConfig(n_clients=5), shards, test)
    with pytest.raises(ConfigError):
        Simulation(TrainConfig(n_clients=4), shards, test, defense="krum", verify=True)
    with pytest.raises(ConfigError):
        Simulation(TrainConfig(n_clients=4, weighted_fedavg=True), shards, test, verify=True)
