import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zkfl.errors import DimensionError
from zkfl.state import ClientUpdate
from zkfl.threat import (ThreatPlan, apply_byzantine, apply_free_rider, apply_model_replacement,
                         schedule)


def upd(vec):
    return ClientUpdate(0, 0, np.asarray(vec, float), slice(0, None))


def test_plan_validation():
    with pytest.raises(ValueError):
        ThreatPlan("nope")
    with pytest.raises(ValueError):
        ThreatPlan("byzantine_random", attack_probability=1.5)
    with pytest.raises(ValueError):
        ThreatPlan("byzantine_random", noise_scale=0.0)
    with pytest.raises(ValueError):
        ThreatPlan("byzantine_random", {0, 1, 2, 3, 4}).validate(10)
    ThreatPlan("byzantine_random", {0, 1, 2, 3, 4}, all_malicious_rounds=True).validate(10)
    with pytest.raises(ValueError):
        ThreatPlan("byzantine_random", {10}).validate(10)


def test_schedule_frequency():
    plan = ThreatPlan("byzantine_random", {1}, attack_probability=0.4)
    rng = np.random.default_rng(0)
    hits = [schedule(plan, t, rng, 10)[0] for t in range(5000)]
    assert abs(np.mean(hits) - 0.4) < 0.03
    assert schedule(ThreatPlan(), 0, rng, 10) == (False, frozenset())
    all_plan = ThreatPlan("byzantine_random", attack_probability=1.0, all_malicious_rounds=True)
    assert schedule(all_plan, 0, rng, 4) == (True, frozenset(range(4)))


def test_byzantine_noise_statistics():
    u = upd(np.zeros(20000))
    out = apply_byzantine(u, 2.0, np.random.default_rng(0))
    assert abs(out.model.std() - 2.0) < 0.05
    rep = apply_byzantine(upd(np.full(4, 100.0)), 1.0, np.random.default_rng(0), "replace")
    assert np.all(np.abs(rep.model) < 10)
    with pytest.raises(ValueError):
        apply_byzantine(u, 1.0, np.random.default_rng(0), "other")


@given(st.integers(2, 20), st.integers(0, 2 ** 31))
def test_model_replacement_lands_on_backdoor(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=5)
    bad = rng.normal(size=5)
    attacked = apply_model_replacement(upd(g), g, n, bad)
    # the other n-1 clients return the global unchanged
    avg = (attacked.model + (n - 1) * g) / n
    np.testing.assert_allclose(avg, bad, atol=1e-9)


def test_model_replacement_dimension_check():
    with pytest.raises(DimensionError):
        apply_model_replacement(upd([0.0, 0.0]), [0.0], 2, [1.0])


def test_free_rider_close_to_global():
    g = np.arange(5.0)
    out = apply_free_rider(upd(np.zeros(5)), g, np.random.default_rng(0))
    assert np.max(np.abs(out.model - g)) < 0.01
