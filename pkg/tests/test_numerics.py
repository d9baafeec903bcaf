import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bacap.numerics import (NumericFailure, apply_dropout, dropout_mask, finite_diff_grad,
                            glorot_init, make_rng, orthogonal_init, sigmoid, softmax)


def test_rng_is_reproducible():
    a = make_rng(42).standard_normal(5)
    b = make_rng(42).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(43).standard_normal(5))


def test_glorot_single_entry_variance():
    rng = make_rng(7)
    first = glorot_init(1, 1, rng)
    assert first.shape == (1, 1) and np.isfinite(first).all()
    draws = np.array([glorot_init(1, 1, rng)[0, 0] for _ in range(100_000)])
    assert abs(draws.var() - 1.0) < 0.05


def test_glorot_zero_mean():
    rng = make_rng(3)
    entries = np.concatenate([glorot_init(4, 4, rng).ravel() for _ in range(62_500)])
    assert entries.size == 1_000_000
    assert abs(entries.mean()) < 0.01


def test_glorot_deterministic_and_rejects_empty():
    assert np.array_equal(glorot_init(3, 5, make_rng(1)), glorot_init(3, 5, make_rng(1)))
    with pytest.raises(ValueError):
        glorot_init(0, 3, make_rng(1))


def test_orthogonal_small_cases():
    q1 = orthogonal_init(1, make_rng(0))
    assert q1.shape == (1, 1) and abs(q1[0, 0]) == 1.0
    q = orthogonal_init(8, make_rng(5))
    assert np.max(np.abs(q.T @ q - np.eye(8))) < 1e-10
    assert abs(abs(np.linalg.det(q)) - 1.0) < 1e-8
    assert np.array_equal(q, orthogonal_init(8, make_rng(5)))


def test_orthogonal_rejects_bad_dim():
    with pytest.raises(ValueError):
        orthogonal_init(0, make_rng(0))


def test_finite_diff_scalar_examples():
    assert abs(finite_diff_grad(lambda t: t * t, 3.0, 1e-5) - 6.0) < 1e-6
    assert finite_diff_grad(lambda t: 4.0, 1.5, 1e-5) == 0.0
    assert abs(finite_diff_grad(math.sin, 0.0, 1e-5) - 1.0) < 1e-8


def test_finite_diff_array_restores_params():
    theta = np.array([[1.0, -2.0], [0.5, 3.0]])
    before = theta.copy()
    g = finite_diff_grad(lambda x: float((x ** 3).sum()), theta, 1e-5)
    assert np.allclose(g, 3 * before ** 2, atol=1e-7)
    assert np.array_equal(theta, before)


def test_finite_diff_non_finite_loss():
    with pytest.raises(NumericFailure):
        finite_diff_grad(lambda x: float("nan"), np.zeros(2))


def test_sigmoid_and_tanh_fixed_points():
    assert sigmoid(0.0) == 0.5
    assert np.tanh(0.0) == 0.0
    big = sigmoid(np.array([-800.0, 800.0]))
    assert big[0] >= 0.0 and big[1] <= 1.0 and np.isfinite(big).all()


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_sigmoid_open_interval(x):
    # beyond |x| ~ 37 the float64 result rounds to exactly 0 or 1
    s = sigmoid(x)
    assert 0.0 < s < 1.0


def test_matvec_matches_triple_loop():
    rng = make_rng(11)
    for _ in range(5):
        a = rng.standard_normal((16, 16))
        x = rng.standard_normal(16)
        ref = [sum(a[i, j] * x[j] for j in range(16)) for i in range(16)]
        assert np.max(np.abs(a @ x - np.array(ref))) < 1e-12


def test_softmax_shift_invariant():
    z = np.array([0.3, -1.2, 2.0])
    assert np.allclose(softmax(z), softmax(z + 17.0), atol=1e-12)
    assert abs(softmax(z).sum() - 1.0) < 1e-12


def test_dropout_identity_cases():
    x = np.arange(6.0)
    rng = make_rng(0)
    assert np.array_equal(apply_dropout(x, 1.0, rng, "train"), x)
    assert np.array_equal(apply_dropout(x, 0.5, rng, "test"), x)


def test_dropout_expectation():
    rng = make_rng(9)
    x = np.array([1.0, -2.0, 0.5])
    masks = np.array([dropout_mask(x.shape, 0.5, rng) for _ in range(100_000)])
    mean = (masks * x).mean(axis=0)
    assert np.all(np.abs(mean - x) <= 0.01 * np.abs(x))
    assert set(np.unique(masks)) <= {0.0, 2.0}
