import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zkfl.errors import DegenerateVectorError, DimensionError, InsufficientSamplesError
from zkfl.tensor import (LayeredModel, cosine_similarity, importance_layer, l2_distance,
                         layer_sensitivity, param_vector, sample_stats)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.lists(finite, min_size=n, max_size=n), st.lists(finite, min_size=n, max_size=n)))


def test_param_vector_is_read_only_and_finite():
    v = param_vector([1.0, 2.0])
    with pytest.raises(ValueError):
        v[0] = 3.0
    with pytest.raises(ValueError):
        param_vector([1.0, float("nan")])
    with pytest.raises(ValueError):
        param_vector([])


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    # exact rational evaluation: 32 / sqrt(1078)
    assert cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(0.9746318461970763, abs=1e-9)


def test_cosine_errors():
    with pytest.raises(DimensionError):
        cosine_similarity([1, 2], [1, 2, 3])
    with pytest.raises(DegenerateVectorError):
        cosine_similarity([0, 0], [1, 2])


def test_l2_examples():
    v = [0.3, -1.2, 5.0]
    assert l2_distance(v, v) == 0.0
    assert l2_distance([0, 0], [3, 4]) == 5.0
    assert l2_distance([1, 1, 1], [2, 3, 4]) == pytest.approx(3.7416573867739413, abs=1e-12)
    with pytest.raises(DimensionError):
        l2_distance([1], [1, 2])


def test_sample_stats_examples():
    s = sample_stats([1, 1, 1, 1])
    assert (s.mean, s.std_dev, s.count) == (1.0, 0.0, 4)
    s = sample_stats([1, 1, 1, 1, 10])
    assert s.mean == pytest.approx(2.8, abs=1e-12)
    assert s.std_dev == pytest.approx(4.024922359499621, abs=1e-9)
    s = sample_stats([0, 2])
    assert (s.mean, s.std_dev) == (1.0, pytest.approx(math.sqrt(2)))
    with pytest.raises(InsufficientSamplesError):
        sample_stats([3.0])


@given(vectors, st.floats(0.01, 100))
def test_cosine_symmetric_and_scale_invariant(ab, c):
    a, b = ab
    if not (np.any(a) and np.any(b)):
        return
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    assert cosine_similarity(np.array(a) * c, b) == pytest.approx(s, abs=1e-9)


@given(st.integers(1, 8).flatmap(lambda n: st.lists(
    st.lists(finite, min_size=n, max_size=n), min_size=3, max_size=3)))
def test_l2_triangle_inequality(pts):
    a, b, c = pts
    assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-9


@given(st.lists(finite, min_size=2, max_size=30), st.randoms())
def test_sample_stats_permutation_invariant(scores, rnd):
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert sample_stats(scores) == sample_stats(shuffled)


def test_importance_layer_positions():
    mlp = LayeredModel([("hidden", (65, 64)), ("output", (65, 10))], np.arange(65 * 64 + 650.0))
    imp = importance_layer(mlp)
    assert imp.shape == (65 * 64,)
    np.testing.assert_array_equal(imp, np.arange(65 * 64.0))
    lr = LayeredModel([("linear", (11, 3))], np.ones(33))
    np.testing.assert_array_equal(importance_layer(lr), np.ones(33))


def cnn_dropout_layers(n_classes):
    return [("conv2d_1.weight", (32, 1, 3, 3)), ("conv2d_1.bias", (32,)),
            ("conv2d_2.weight", (64, 32, 3, 3)), ("conv2d_2.bias", (64,)),
            ("linear_1.weight", (128, 9216)), ("linear_1.bias", (128,)),
            ("linear_2.weight", (n_classes, 128)), ("linear_2.bias", (n_classes,))]


def test_cnn_importance_segment_shape():
    # 62-class head: the second-to-last tensor has the quoted 7,936 entries
    m = LayeredModel(cnn_dropout_layers(62))
    assert importance_layer(m).shape == (7936,)
    # the quoted 1,199,882 total matches the 10-class head instead
    assert LayeredModel(cnn_dropout_layers(10)).size == 1_199_882


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=5))
def test_layers_cover_backing(shapes):
    layers = [(f"l{i}", s) for i, s in enumerate(shapes)]
    n = sum(a * b for a, b in shapes)
    m = LayeredModel(layers, np.random.default_rng(0).normal(size=n))
    assert np.array_equal(np.concatenate(m.slices()), m.backing)
    ends = [s.offset + s.size for s in m.layers]
    assert [s.offset for s in m.layers] == [0] + ends[:-1]
    if len(layers) > 1:
        assert importance_layer(m).shape[0] == m.layers[-2].size


def test_layered_model_rejects_wrong_backing():
    with pytest.raises(DimensionError):
        LayeredModel([("a", (2, 2))], np.zeros(5))


def test_layer_sensitivity():
    m = LayeredModel([("a", (2,)), ("b", (3,)), ("c", (1,))])
    assert [v for _, v in layer_sensitivity(m)] == [0.0, 0.0, 0.0]
    g = m.with_backing([0, 0, 0, 1, 0, 0])
    assert layer_sensitivity(g) == [("a", 0.0), ("b", 1.0), ("c", 0.0)]
