import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshdiff.optimize import (
    OK_STATUSES,
    ConvergenceHistory,
    OptimizerConfig,
    minimize_dfo,
    minimize_quasi_newton,
    trust_region_step,
)

CENTER = np.array([1.5, -2.0, 0.3])
CURV = np.array([1.0, 4.0, 2.0])


def bowl(x):
    return float(np.sum(CURV * (x - CENTER) ** 2))


def bowl_with_grad(x):
    return bowl(x), 2 * CURV * (x - CENTER)


def rosenbrock(x):
    return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


def staircase(x):
    # flat terraces away from a narrow quadratic well at 7
    r = abs(x[0] - 7.0)
    return float(math.floor(r)) if r >= 1 else -1.0 + 0.1 * r**2


# -- configuration -------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(initial_radius=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(tol_obj=-1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(lower_bounds=(1.0,), upper_bounds=(0.0,))
    with pytest.raises(ValueError):
        OptimizerConfig(method="NELDER_MEAD")
    assert OptimizerConfig.dfo().initial_radius == 3.0
    assert OptimizerConfig.quasi_newton().max_evals == 500
    assert OptimizerConfig.dfo().max_evals == 2000


def test_history_best_so_far_skips_non_finite():
    h = ConvergenceHistory()
    for v in (3.0, math.nan, 5.0, 1.0, 2.0):
        h.add([v], v)
    np.testing.assert_array_equal(h.best_so_far(), [3, 3, 3, 1, 1])
    assert h.best().index == 3


# -- quasi-Newton --------------------------------------------------------------


def test_quasi_newton_recovers_bowl_center():
    res = minimize_quasi_newton(bowl_with_grad, np.zeros(3))
    assert np.max(np.abs(res.x - CENTER)) <= 1e-8
    assert len(res.history) <= 50
    assert res.status == "converged"


def test_quasi_newton_start_at_minimum():
    res = minimize_quasi_newton(bowl_with_grad, CENTER.copy())
    assert len(res.history) == 1
    np.testing.assert_array_equal(res.x, CENTER)


def test_quasi_newton_active_bound():
    cfg = OptimizerConfig.quasi_newton(lower_bounds=(1.0,), upper_bounds=(10.0,))
    res = minimize_quasi_newton(lambda x: (float(x[0] ** 2), 2 * x), [3.0], cfg)
    assert res.x[0] == 1.0


def test_quasi_newton_aborts_on_non_finite_and_keeps_history():
    def f(x):
        if x[0] < 1:
            return math.nan, np.zeros(1)
        return float(x[0] ** 2), 2 * x

    res = minimize_quasi_newton(f, [3.0])
    assert res.status == "aborted"
    assert len(res.history) >= 2
    assert math.isfinite(res.fun) and res.x[0] >= 1


def test_quasi_newton_respects_budget():
    res = minimize_quasi_newton(lambda x: (rosenbrock(x), rosen_grad(x)), [-1.2, 1.0],
                                OptimizerConfig.quasi_newton(max_evals=5))
    assert len(res.history) <= 5
    assert res.status in OK_STATUSES


def rosen_grad(x):
    return np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])


def test_quasi_newton_stalls_on_a_terrace():
    # zero gradient on a flat terrace: a gradient method cannot see the well
    res = minimize_quasi_newton(lambda x: (staircase(x), np.zeros(1)), [0.0])
    assert res.fun == 7.0


# -- trust-region subproblem ---------------------------------------------------------


def test_trust_region_step_is_newton_step_when_inside():
    g, H = np.array([1.0, -2.0]), np.diag([2.0, 4.0])
    s = trust_region_step(g, H, 10.0, np.full(2, -np.inf), np.full(2, np.inf))
    np.testing.assert_allclose(s, [-0.5, 0.5], rtol=1e-10)


def test_trust_region_step_respects_radius_and_box():
    g, H = np.array([-5.0, 1.0]), np.zeros((2, 2))
    s = trust_region_step(g, H, 1.0, np.array([-1.0, -0.1]), np.array([0.2, 1.0]))
    assert np.linalg.norm(s) <= 1.0 + 1e-12
    assert -1.0 <= s[0] <= 0.2 and -0.1 <= s[1] <= 1.0
    assert g @ s < 0


# -- derivative-free -----------------------------------------------------------


def test_dfo_rosenbrock():
    res = minimize_dfo(rosenbrock, [-1.2, 1.0], OptimizerConfig.dfo(max_evals=500))
    assert res.fun <= 1e-6
    assert len(res.history) <= 500


def test_dfo_bowl():
    res = minimize_dfo(bowl, np.zeros(3))
    assert np.max(np.abs(res.x - CENTER)) <= 1e-6
    assert res.status == "converged"


def test_dfo_flat_objective_stops_cleanly():
    res = minimize_dfo(lambda x: 1.0, [0.0, 0.0])
    assert res.status == "converged"
    assert "tol_step" in res.message
    assert len(res.history) < 200


def test_dfo_escapes_terraces_into_the_well():
    res = minimize_dfo(staircase, [0.0])
    assert res.fun < 0
    assert abs(res.x[0] - 7.0) < 1e-4


def test_dfo_rejects_non_finite_points():
    def f(x):
        return math.nan if x[0] > 1 else float((x[0] - 0.5) ** 2 + x[1] ** 2)

    res = minimize_dfo(f, [0.0, 1.0])
    assert res.status in OK_STATUSES
    assert res.fun <= 1e-10


def test_dfo_non_finite_start_aborts():
    res = minimize_dfo(lambda x: math.inf, [0.0])
    assert res.status == "aborted"
    assert len(res.history) == 1


def test_dfo_budget_is_exact_upper_limit():
    res = minimize_dfo(rosenbrock, [-1.2, 1.0], OptimizerConfig.dfo(max_evals=12))
    assert len(res.history) <= 12
    assert res.status == "max_evals"


def test_dfo_is_deterministic():
    a = minimize_dfo(rosenbrock, [-1.2, 1.0], OptimizerConfig.dfo(max_evals=300))
    b = minimize_dfo(rosenbrock, [-1.2, 1.0], OptimizerConfig.dfo(max_evals=300))
    assert len(a.history) == len(b.history)
    for ra, rb in zip(a.history.records, b.history.records):
        np.testing.assert_array_equal(ra.params, rb.params)
        assert ra.value == rb.value


def test_dfo_passes_components_into_history():
    res = minimize_dfo(lambda x: (bowl(x), {"part": 1.0}), np.zeros(3), OptimizerConfig.dfo(max_evals=20))
    assert all(r.components == {"part": 1.0} for r in res.history.records)


# -- properties shared by both ---------------------------------------------------------


def shifted_bowl(center):
    def f(x):
        return float(np.sum((x - center) ** 2))

    return f


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_bounds_are_never_violated_and_best_is_monotone(start, center):
    lo, hi = np.array([-1.0, 0.0]), np.array([2.0, 0.5])
    x0 = np.clip(start, lo, hi)
    center = np.array(center)
    f = shifted_bowl(center)
    cfg_d = OptimizerConfig.dfo(lower_bounds=tuple(lo), upper_bounds=tuple(hi), max_evals=150)
    cfg_q = OptimizerConfig.quasi_newton(lower_bounds=tuple(lo), upper_bounds=tuple(hi))
    runs = [minimize_dfo(f, x0, cfg_d), minimize_quasi_newton(lambda x: (f(x), 2 * (x - center)), x0, cfg_q)]
    for res in runs:
        P = np.array([r.params for r in res.history.records])
        assert np.all(P >= lo) and np.all(P <= hi)
        assert np.all(np.diff(res.history.best_so_far()) <= 0)
        # the box-constrained optimum is the clipped center
        assert res.fun <= f(np.clip(center, lo, hi)) + 1e-6
