from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pame.errors import DimensionMismatch, EmptyBatch, InvalidSize
from pame.losses import (
    Dataset,
    LossKind,
    LossSpec,
    epsilon_estimate,
    gen_linear_regression,
    gen_logistic,
    gradient,
    lipschitz_constant,
    load_datasets,
    loss_value,
    save_datasets,
)
from pame.rng import Purpose, stream

LINEAR = LossSpec(LossKind.LINEAR_REGRESSION)
LOGISTIC = LossSpec(LossKind.LOGISTIC, ridge=0.01)


def fd_gradient(spec, ds, w, batch=None, h=1e-6):
    out = np.zeros_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        out[j] = (loss_value(spec, ds, w + e, batch) - loss_value(spec, ds, w - e, batch)) / (2 * h)
    return out


def random_dataset(seed, size=10, n=5, binary=False):
    rng = stream(seed, Purpose.ORACLE)
    a = rng.standard_normal((size, n))
    b = (rng.random(size) < 0.5).astype(float) if binary else rng.standard_normal(size)
    return Dataset(a, b)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.sampled_from([LINEAR, LOGISTIC]))
def test_gradient_matches_finite_differences(seed, spec):
    ds = random_dataset(seed, binary=spec.kind is LossKind.LOGISTIC)
    w = stream(seed, Purpose.ORACLE, 1).standard_normal(ds.dim)
    batch = [0, 3, 7]
    for b in (None, batch):
        got = gradient(spec, ds, w, b)
        ref = fd_gradient(spec, ds, w, b)
        assert np.max(np.abs(got - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_hand_computed_losses():
    ds = Dataset([[1.0, 2.0], [0.0, 1.0]], [1.0, 0.0])
    w = np.array([1.0, 1.0])
    # residuals 2 and 1
    assert loss_value(LINEAR, ds, w) == pytest.approx(0.5 * (4 + 1) / 2)
    assert gradient(LINEAR, ds, w).tolist() == pytest.approx([1.0, 2.5])
    single = Dataset([[0.0]], [1.0])
    assert loss_value(LossSpec(LossKind.LOGISTIC, ridge=0.0), single, np.zeros(1)) == pytest.approx(math.log(2))


def test_logistic_stable_for_large_margins():
    ds = Dataset([[1.0]], [0.0])
    spec = LossSpec(LossKind.LOGISTIC, ridge=0.0)
    assert loss_value(spec, ds, np.array([800.0])) == pytest.approx(800.0)
    assert gradient(spec, ds, np.array([800.0])).tolist() == [1.0]
    assert gradient(spec, ds, np.array([-800.0])).tolist() == [0.0]


def test_lipschitz_matches_eigvalsh():
    ds = random_dataset(4, size=30, n=6)
    top = float(np.linalg.eigvalsh(ds.features.T @ ds.features / ds.size).max())
    assert lipschitz_constant(LINEAR, ds) == pytest.approx(top, rel=1e-9)
    assert lipschitz_constant(LOGISTIC, ds) == pytest.approx(0.25 * top + 0.01, rel=1e-9)
    wide = random_dataset(5, size=3, n=8)
    top = float(np.linalg.eigvalsh(wide.features.T @ wide.features / 3).max())
    assert lipschitz_constant(LINEAR, wide) == pytest.approx(top, rel=1e-9)


def test_input_errors():
    ds = random_dataset(0)
    with pytest.raises(DimensionMismatch):
        gradient(LINEAR, ds, np.zeros(4))
    with pytest.raises(EmptyBatch):
        gradient(LINEAR, ds, np.zeros(5), [])
    with pytest.raises(EmptyBatch):
        loss_value(LINEAR, ds, np.zeros(5), [10])
    with pytest.raises(InvalidSize):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        LossSpec(LossKind.LOGISTIC, ridge=-1.0)


def test_epsilon_single_sample_is_zero():
    assert epsilon_estimate(LINEAR, [Dataset([[1.0, 2.0]], [3.0])], delta=1.0) == 0.0


def test_epsilon_duplicate_rows_is_zero():
    ds = Dataset([[1.0, -2.0]] * 4, [0.5] * 4)
    assert epsilon_estimate(LINEAR, [ds], delta=1.0) == 0.0
    # Batch means of identical terms differ only by rounding.
    assert epsilon_estimate(LOGISTIC, [Dataset([[1.0, -2.0]] * 4, [1.0] * 4)], delta=1.0) < 1e-15


def test_epsilon_two_samples_exhaustive():
    # Batch gradients are w, 4w and 2.5w; the worst gap is 3|w| at |w| = 2.
    ds = Dataset([[1.0], [2.0]], [0.0, 0.0])
    assert epsilon_estimate(LINEAR, [ds], delta=1.0) == pytest.approx(6.0)


def test_epsilon_monotone_in_trials():
    _, shards = gen_linear_regression(5, 20, 2, seed=1)
    short = epsilon_estimate(LINEAR, shards, delta=1.0, trials=20, seed=3)
    long = epsilon_estimate(LINEAR, shards, delta=1.0, trials=200, seed=3)
    assert 0 < short <= long


def test_epsilon_rejects_bad_arguments():
    with pytest.raises(InvalidSize):
        epsilon_estimate(LINEAR, [random_dataset(0)], delta=0.0)


def test_linear_generator_shapes_and_determinism():
    truth, shards = gen_linear_regression(100, 40, 3, seed=7)
    assert len(shards) == 3
    assert all(ds.features.shape == (40, 100) for ds in shards)
    assert np.count_nonzero(truth.w_star) == 1
    _, again = gen_linear_regression(100, 40, 3, seed=7)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(shards, again))
    _, other = gen_linear_regression(100, 40, 3, seed=8)
    assert not np.array_equal(shards[0].features, other[0].features)


def test_linear_generator_noise_free_targets():
    truth, shards = gen_linear_regression(10, 5, 2, sparsity=0.3, noise_scale=0.0)
    assert np.count_nonzero(truth.w_star) == 3
    for ds in shards:
        assert np.allclose(ds.features @ truth.w_star, ds.targets)


def test_heterogeneous_scaling():
    _, plain = gen_linear_regression(4, 6, 4, seed=2)
    _, scaled = gen_linear_regression(4, 6, 4, seed=2, heterogeneous=True)
    assert np.allclose(scaled[2].features, plain[2].features * 1.25)


def test_logistic_generator_labels():
    truth, shards = gen_logistic(8, 50, 4, seed=1)
    assert np.count_nonzero(truth.w_star) == 4
    assert all(set(np.unique(ds.targets)) <= {0.0, 1.0} for ds in shards)


def test_label_skew_single_label_per_node():
    _, shards = gen_logistic(8, 30, 4, seed=1, label_skew=1)
    labels = [set(np.unique(ds.targets).tolist()) for ds in shards]
    assert labels == [{0.0}, {0.0}, {1.0}, {1.0}]
    with pytest.raises(InvalidSize):
        gen_logistic(8, 30, 4, label_skew=0)


def test_generator_size_errors():
    with pytest.raises(InvalidSize):
        gen_linear_regression(0, 10, 2)
    with pytest.raises(InvalidSize):
        gen_linear_regression(10, 10, 2, sparsity=0.0)


def test_save_load_round_trip(tmp_path):
    truth, shards = gen_linear_regression(6, 4, 3, sparsity=0.5, seed=9)
    save_datasets(tmp_path, shards, truth)
    back, back_truth = load_datasets(tmp_path)
    assert len(back) == 3
    for x, y in zip(shards, back):
        assert np.array_equal(x.features, y.features)
        assert np.array_equal(x.targets, y.targets)
        assert x.node_id == y.node_id
    assert np.array_equal(back_truth.w_star, truth.w_star)
