import gzip

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zkfl.dataset import (BackdoorSpec, LabeledDataset, PartitionSpec, apply_trigger,
                          generate_blobs, idx_bytes, inject_backdoor, load_idx, partition,
                          partition_indices, save_idx, train_test_split)
from zkfl.errors import FormatError, PartitionError


def test_blobs_shape_balance_and_determinism():
    a = generate_blobs(10, 50, 3000, seed=7)
    b = generate_blobs(10, 50, 3000, seed=7)
    assert a.features.shape == (3000, 50)
    np.testing.assert_array_equal(a.features, b.features)
    hist = a.class_histogram()
    assert hist.max() - hist.min() <= 1
    assert not np.array_equal(a.features, generate_blobs(10, 50, 3000, seed=8).features)


def test_blobs_scale_only_rescales():
    a = generate_blobs(3, 4, 30, seed=1)
    b = generate_blobs(3, 4, 30, seed=1, scale=0.25)
    np.testing.assert_allclose(b.features, 0.25 * a.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        generate_blobs(3, 4, 30, seed=1, scale=0.0)


def test_blobs_are_separable():
    d = generate_blobs(10, 50, 3000, seed=0)
    means = np.vstack([d.features[d.labels == c].mean(0) for c in range(10)])
    nearest = np.argmin(((d.features[:, None] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == d.labels) > 0.95


def test_labeled_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), [0, 2], 2)


def test_split_is_disjoint_cover():
    d = generate_blobs(3, 2, 100, seed=0)
    tr, te = train_test_split(d, 0.25, seed=1)
    assert (len(tr), len(te)) == (75, 25)
    rows = {tuple(r) for r in np.vstack([tr.features, te.features])}
    assert len(rows) == 100


@given(st.integers(1, 12), st.sampled_from(["iid", "dirichlet"]), st.floats(0.1, 5.0),
       st.integers(0, 2 ** 31))
def test_partition_disjoint_and_covering(k, mode, alpha, seed):
    labels = np.arange(200) % 5
    spec = PartitionSpec(k, mode, alpha)
    try:
        parts = partition_indices(labels, spec, seed)
    except PartitionError:
        assert mode == "dirichlet"
        return
    allidx = np.concatenate(parts)
    assert len(parts) == k and all(len(p) for p in parts)
    assert sorted(allidx.tolist()) == list(range(200))


def test_iid_partition_balanced_and_deterministic():
    parts = partition_indices(np.zeros(103, int), PartitionSpec(10), 3)
    assert {len(p) for p in parts} <= {10, 11}
    again = partition_indices(np.zeros(103, int), PartitionSpec(10), 3)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))


def test_small_alpha_skews_labels():
    labels = np.arange(2000) % 10
    parts = partition_indices(labels, PartitionSpec(10, "dirichlet", 0.05), 0)
    dominant = [np.bincount(labels[p], minlength=10).max() / len(p) for p in parts]
    assert np.mean(dominant) > 0.5


def test_too_many_clients():
    with pytest.raises(PartitionError):
        partition_indices(np.zeros(3, int), PartitionSpec(4), 0)


def test_partition_returns_datasets():
    d = generate_blobs(3, 2, 30, seed=0)
    shards = partition(d, PartitionSpec(3), 0)
    assert sum(len(s) for s in shards) == 30


def _img_dataset():
    rng = np.random.default_rng(0)
    pix = rng.integers(0, 256, size=(6, 28 * 28))
    return LabeledDataset(pix / 255.0, [0, 1, 2, 3, 4, 5], 10, (28, 28))


def test_idx_round_trip(tmp_path):
    d = _img_dataset()
    save_idx(d, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(back.labels, d.labels)
    np.testing.assert_allclose(back.features, d.features)
    assert back.image_shape == (28, 28) and back.features.max() <= 1.0


def test_idx_gzip(tmp_path):
    images, labels = idx_bytes(_img_dataset())
    (tmp_path / "i.gz").write_bytes(gzip.compress(images))
    (tmp_path / "l.gz").write_bytes(gzip.compress(labels))
    assert len(load_idx(tmp_path / "i.gz", tmp_path / "l.gz")) == 6


def test_idx_rejects_bad_files(tmp_path):
    images, labels = idx_bytes(_img_dataset())
    (tmp_path / "i").write_bytes(images)
    (tmp_path / "l").write_bytes(labels)
    (tmp_path / "bad_magic").write_bytes(b"\x00\x00\x08\x02" + images[4:])
    (tmp_path / "short").write_bytes(images[:-1])
    (tmp_path / "few").write_bytes(labels[:-1])
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "bad_magic", tmp_path / "l")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "short", tmp_path / "l")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "few")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l", n_classes=3)


def test_backdoor_injection():
    d = generate_blobs(4, 6, 200, seed=0)
    spec = BackdoorSpec((0, 1), 9.0, 2, 0.25)
    poisoned, trig = inject_backdoor(d, spec, seed=1)
    stamped = np.all(poisoned.features[:, [0, 1]] == 9.0, axis=1)
    assert stamped.sum() == 50
    assert np.all(poisoned.labels[stamped] == 2)
    assert np.all(trig.labels != 2) and np.all(trig.features[:, [0, 1]] == 9.0)
    # clean rows are untouched
    np.testing.assert_array_equal(poisoned.features[~stamped], d.features[~stamped])
    with pytest.raises(ValueError):
        apply_trigger(d, BackdoorSpec((99,), 1.0, 0, 0.5))
    with pytest.raises(ValueError):
        BackdoorSpec(poison_fraction=0.0)
