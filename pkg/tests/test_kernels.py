import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import rq_kernel_loop, se_kernel_loop
from scipy.linalg import cholesky

from meshdiff.kernels import (
    Hyperparams,
    KernelSpec,
    kernel_diag,
    kernel_eval,
    kernel_matrix,
    matrix_and_log_derivatives,
    pack_log,
    pack_raw,
    param_names,
    unpack_log,
    unpack_raw,
)


def se(ls, sigma=0.15, **kw):
    return KernelSpec("SE", Hyperparams(sigma, tuple(np.atleast_1d(ls))), **kw)


def rq(ls, alpha, sigma=0.15, **kw):
    return KernelSpec("RQ", Hyperparams(sigma, tuple(np.atleast_1d(ls)), alpha), **kw)


def test_se_zero_distance_is_sigma_squared():
    assert kernel_eval(se([1.0, 2.0]), [0.3, 0.4], [0.3, 0.4]) == pytest.approx(0.0225, abs=1e-17)


def test_se_at_sqrt2_lengthscales():
    lam = 0.7
    assert kernel_eval(se([lam]), [0.0], [lam * math.sqrt(2)]) == pytest.approx(0.0225 * math.exp(-1), rel=1e-14)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
def test_rq_zero_distance_is_sigma_squared(alpha):
    assert kernel_eval(rq([1.0], alpha), [2.0], [2.0]) == pytest.approx(0.0225, rel=1e-15)


def test_single_point_matrix():
    np.testing.assert_array_equal(kernel_matrix(se([1.0]), [[0.0]]), [[0.0225]])


def test_collinear_points_closed_form():
    lam = 1.3
    K = kernel_matrix(se([lam]), [[0.0], [lam], [2 * lam]])
    want = 0.0225 * np.exp(-np.subtract.outer(np.arange(3), np.arange(3)) ** 2 / 2)
    np.testing.assert_allclose(K, want, rtol=1e-14)


def test_matches_loop_oracle():
    rng = np.random.default_rng(3)
    A, B = rng.uniform(0, 5, (7, 3)), rng.uniform(0, 5, (4, 3))
    ls = [0.5, 2.0, 1.1]
    np.testing.assert_allclose(kernel_matrix(se(ls, 0.3), A, B), se_kernel_loop(A, B, 0.3, ls), rtol=1e-13)
    np.testing.assert_allclose(kernel_matrix(rq(ls, 0.8, 0.3), A, B), rq_kernel_loop(A, B, 0.3, ls, 0.8),
                               rtol=1e-13)


@pytest.mark.parametrize("spec", [se([0.3, 1.0, 4.0]), rq([0.3, 1.0, 4.0], 0.05)])
def test_gram_matrix_is_exactly_symmetric(spec):
    X = np.random.default_rng(0).uniform(0, 10, (60, 3))
    K = kernel_matrix(spec, X)
    assert np.array_equal(K, K.T)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        kernel_matrix(se([1.0, 1.0]), [[0.0, 0.0, 0.0]])


def test_rq_tends_to_se():
    X = np.random.default_rng(5).uniform(0, 4, (20, 3))
    ls = [0.7, 1.5, 3.0]
    diff = kernel_matrix(rq(ls, 1e6), X) - kernel_matrix(se(ls), X)
    assert np.max(np.abs(diff)) <= 1e-4 * 0.15**2


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.sampled_from(["SE", "RQ"]))
def test_kernel_is_symmetric_in_arguments(x, xp, kind):
    spec = se([0.4, 1.0, 2.5]) if kind == "SE" else rq([0.4, 1.0, 2.5], 0.3)
    assert kernel_eval(spec, x, xp) == kernel_eval(spec, xp, x)


@given(st.integers(0, 2), st.floats(0.0, 3.0), st.floats(0.01, 3.0), st.sampled_from(["SE", "RQ"]))
def test_kernel_decreases_with_each_coordinate_distance(axis, d0, extra, kind):
    spec = se([0.5, 1.0, 2.0]) if kind == "SE" else rq([0.5, 1.0, 2.0], 2.0)
    near = np.zeros(3)
    near[axis] = d0
    far = near.copy()
    far[axis] = d0 + extra
    assert kernel_eval(spec, np.zeros(3), far) <= kernel_eval(spec, np.zeros(3), near)


@pytest.mark.parametrize("n", [200, 1500])
def test_cholesky_with_noiseless_jitter(n):
    rng = np.random.default_rng(n)
    X = rng.uniform(0, 10, (n, 3))
    K = kernel_matrix(se([1.0, 1.0, 1.0]), X) + 1e-10 * np.eye(n)
    L = cholesky(K, lower=True)
    assert np.all(np.isfinite(L))


def test_kernel_diag():
    np.testing.assert_array_equal(kernel_diag(rq([1.0], 2.0), np.zeros((3, 1))), [0.0225] * 3)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(0.0, (1.0,))
    with pytest.raises(ValueError):
        Hyperparams(0.1, (1.0, -1.0))
    with pytest.raises(ValueError):
        Hyperparams(0.1, (1.0,), alpha=0.0)
    with pytest.raises(ValueError, match="alpha"):
        KernelSpec("SE", Hyperparams(0.1, (1.0,), 2.0))
    with pytest.raises(ValueError, match="kind"):
        KernelSpec("MATERN", Hyperparams(0.1, (1.0,)))


# -- packing -------------------------------------------------------------------


def test_pack_unit_lengthscales_to_zeros():
    np.testing.assert_array_equal(pack_log(se([1.0, 1.0, 1.0])), np.zeros(3))


def test_pack_small_lengthscale():
    assert pack_log(se([0.01]))[0] == pytest.approx(-4.6051702, abs=1e-7)


def test_fixed_sigma_is_not_packed():
    spec = rq([1.0, 2.0], 3.0, sigma=0.15)
    assert param_names(spec) == ["lengthscale_1", "lengthscale_2", "alpha"]
    np.testing.assert_array_equal(pack_raw(spec), [1.0, 2.0, 3.0])
    trained = rq([1.0, 2.0], 3.0, train_sigma=True)
    assert param_names(trained)[0] == "sigma"
    assert pack_raw(trained)[0] == 0.15


def test_tied_lengthscales_pack_to_one_value():
    spec = se([2.0, 2.0, 2.0], tied_lengthscales=True)
    assert param_names(spec) == ["lengthscale"]
    assert unpack_raw(spec, [5.0]).params.lengthscales == (5.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        se([1.0, 2.0], tied_lengthscales=True)


@given(st.lists(st.floats(1e-4, 1e4), min_size=1, max_size=4), st.floats(1e-3, 1e3), st.booleans())
def test_log_pack_round_trip(ls, alpha, train_sigma):
    spec = rq(ls, alpha, sigma=0.37, train_sigma=train_sigma)
    back = unpack_log(spec, pack_log(spec))
    for a, b in zip(pack_raw(back), pack_raw(spec)):
        assert abs(a - b) <= 1e-15 * abs(b)


def test_nonpositive_parameters_are_rejected_before_packing():
    with pytest.raises(ValueError, match="positive"):
        se([1.0, 0.0])
    with pytest.raises(ValueError, match="positive"):
        unpack_raw(se([1.0]), [-2.0])


def test_overflowing_log_lengthscale_ignores_that_axis():
    spec = unpack_log(se([1.0, 1.0]), [1000.0, 0.0])
    assert spec.params.lengthscales[0] == math.inf
    assert kernel_eval(spec, [0.0, 0.0], [50.0, 0.0]) == pytest.approx(0.0225)


def test_spec_dict_round_trip():
    spec = rq([0.5, 2.0], 4.0, sigma=0.2, train_sigma=True)
    assert KernelSpec.from_dict(spec.to_dict()) == spec
    broadcast = KernelSpec.from_dict({"kind": "SE", "lengthscales": [3.0]}, dims=3)
    assert broadcast.params.lengthscales == (3.0, 3.0, 3.0)
    assert broadcast.params.sigma == 0.15


# -- derivatives -------------------------------------------------------------------


@pytest.mark.parametrize("spec", [
    se([0.6, 1.7], sigma=0.4, train_sigma=True),
    rq([0.6, 1.7], 0.9, sigma=0.4, train_sigma=True),
    se([1.2, 1.2], tied_lengthscales=True),
    rq([1.2, 1.2], 3.0, tied_lengthscales=True),
])
def test_log_derivatives_match_finite_differences(spec):
    X = np.random.default_rng(11).uniform(0, 3, (9, 2))
    K, grads = matrix_and_log_derivatives(spec, X)
    np.testing.assert_allclose(K, kernel_matrix(spec, X), rtol=1e-13)
    x0 = pack_log(spec)
    h = 1e-6
    for j in range(len(x0)):
        e = np.zeros_like(x0)
        e[j] = h
        fd = (kernel_matrix(unpack_log(spec, x0 + e), X) - kernel_matrix(unpack_log(spec, x0 - e), X)) / (2 * h)
        np.testing.assert_allclose(grads[j], fd, rtol=1e-6, atol=1e-10)
