"""Hyperparameter optimizers.

``minimize_quasi_newton`` wraps SciPy's L-BFGS-B for objectives with analytic
gradients.  ``minimize_dfo`` is a derivative-free, bound-constrained
trust-region method: it keeps ``2n + 1`` interpolation points, updates an
underdetermined quadratic model by the least change in Frobenius norm of its
Hessian, and manages a trust radius ``delta`` on top of a resolution ``rho``
that only decreases.  It is written after the Powell family of solvers
(BOBYQA, COBYQA) but does not try to reproduce either one step for step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

log = logging.getLogger(__name__)

QUASI_NEWTON = "QUASI_NEWTON"
DFO = "DFO"


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = DFO
    max_evals: int = 2000
    initial_radius: float = 3.0
    tol_obj: float = 1e-8
    tol_step: float = 1e-10
    lower_bounds: tuple | None = None
    upper_bounds: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in (QUASI_NEWTON, DFO):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if not (self.initial_radius > 0 and self.tol_obj > 0 and self.tol_step > 0):
            raise ValueError("initial_radius and tolerances must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be at least 1")
        if self.lower_bounds is not None and self.upper_bounds is not None:
            lo, hi = np.asarray(self.lower_bounds, float), np.asarray(self.upper_bounds, float)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ValueError("inconsistent bounds")

    @classmethod
    def quasi_newton(cls, **kw) -> OptimizerConfig:
        kw.setdefault("max_evals", 500)
        return cls(method=QUASI_NEWTON, **kw)

    @classmethod
    def dfo(cls, **kw) -> OptimizerConfig:
        return cls(method=DFO, **kw)

    def bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(n, -np.inf) if self.lower_bounds is None else np.asarray(self.lower_bounds, float)
        hi = np.full(n, np.inf) if self.upper_bounds is None else np.asarray(self.upper_bounds, float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValueError(f"bounds must have length {n}")
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "max_evals": self.max_evals,
            "initial_radius": self.initial_radius,
            "tol_obj": self.tol_obj,
            "tol_step": self.tol_step,
            "lower_bounds": None if self.lower_bounds is None else list(self.lower_bounds),
            "upper_bounds": None if self.upper_bounds is None else list(self.upper_bounds),
            "seed": self.seed,
        }


@dataclass
class EvalRecord:
    index: int
    params: np.ndarray
    value: float
    components: dict = field(default_factory=dict)


@dataclass
class ConvergenceHistory:
    records: list[EvalRecord] = field(default_factory=list)

    def add(self, params, value, components=None) -> EvalRecord:
        rec = EvalRecord(len(self.records), np.array(params, dtype=float), float(value), dict(components or {}))
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    def best_so_far(self) -> np.ndarray:
        v = np.where(np.isfinite(self.values), self.values, np.inf)
        return np.minimum.accumulate(v) if len(v) else v

    def best(self) -> EvalRecord | None:
        finite = [r for r in self.records if math.isfinite(r.value)]
        return min(finite, key=lambda r: (r.value, r.index)) if finite else None


OK_STATUSES = ("converged", "stalled", "max_evals")


class OptimizeResult(NamedTuple):
    x: np.ndarray
    history: ConvergenceHistory
    fun: float
    status: str
    message: str


def _split(out):
    """Objective output -> (value, components) for value-only objectives."""
    if isinstance(out, tuple):
        return float(out[0]), (out[1] if len(out) > 1 else {})
    return float(out), {}


# --------------------------------------------------------------------------
# quasi-Newton


class _NonFinite(Exception):
    pass


def minimize_quasi_newton(objective: Callable, x0, config: OptimizerConfig | None = None) -> OptimizeResult:
    """L-BFGS-B on ``objective(x) -> (value, grad[, components])``.

    Stops on projected-gradient norm <= ``tol_obj``, an accepted step no
    longer than ``tol_step`` in any coordinate, or ``max_evals`` evaluations.  A non-finite value or gradient
    aborts the run; the history up to that point is kept.
    """
    config = config or OptimizerConfig.quasi_newton()
    x0 = np.asarray(x0, dtype=float)
    lo, hi = config.bounds(len(x0))
    x0 = np.clip(x0, lo, hi)
    hist = ConvergenceHistory()

    def fun(x):
        x = np.clip(x, lo, hi)
        if len(hist) >= config.max_evals:
            raise _NonFinite("max_evals")
        out = objective(x)
        val, grad = float(out[0]), np.asarray(out[1], dtype=float)
        comps = out[2] if len(out) > 2 else {}
        hist.add(x, val, comps)
        if not (math.isfinite(val) and np.all(np.isfinite(grad))):
            raise _NonFinite("non-finite objective or gradient")
        return val, grad

    bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
    status, message = "converged", ""
    last = [x0.copy()]

    def step_check(intermediate_result):
        x = intermediate_result.x
        small = np.max(np.abs(x - last[0])) <= config.tol_step
        last[0] = x.copy()
        if small:
            raise StopIteration

    try:
        res = _scipy_minimize(
            fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=step_check,
            options={"maxfun": config.max_evals, "maxiter": config.max_evals,
                     "gtol": config.tol_obj, "ftol": 0.0},
        )
        message = str(res.message)
        if res.status == 99 or "callback" in message.lower():
            message = "step below tol_step"
        elif not res.success:
            # L-BFGS-B reports a failed line search once it is at machine precision
            status = "max_evals" if res.nfev >= config.max_evals or res.nit >= config.max_evals else "stalled"
    except _NonFinite as err:
        status = "max_evals" if str(err) == "max_evals" else "aborted"
        message = str(err)
    best = hist.best()
    if best is None:
        return OptimizeResult(x0, hist, math.nan, "aborted", message or "no finite evaluation")
    return OptimizeResult(best.params.copy(), hist, best.value, status, message)


# --------------------------------------------------------------------------
# derivative-free trust region


def _kkt_matrix(S: np.ndarray) -> np.ndarray:
    m, n = S.shape
    W = np.zeros((m + n + 1, m + n + 1))
    W[:m, :m] = 0.5 * (S @ S.T) ** 2
    W[:m, m] = W[m, :m] = 1.0
    W[:m, m + 1:] = S
    W[m + 1:, :m] = S.T
    return W


def _lagrange_values(Winv: np.ndarray, S: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Values of every Lagrange function at the (scaled) displacement ``s``."""
    m = len(S)
    w = np.concatenate([0.5 * (S @ s) ** 2, [1.0], s])
    return Winv[:, :m].T @ w


def trust_region_step(g, H, delta, lo, hi) -> np.ndarray:
    """Truncated conjugate gradient for ``min g.s + s.H.s/2`` in a ball and a box.

    ``lo <= 0 <= hi`` bound the step.  Variables that hit the box are fixed and
    CG is restarted on the rest; the step stops at the ball boundary.
    """
    n = len(g)
    s = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    for _ in range(n + 1):
        grad = g + H @ s
        fixed |= ((s <= lo) & (grad > 0)) | ((s >= hi) & (grad < 0))
        free = ~fixed
        r = np.where(free, -grad, 0.0)
        if r @ r <= 1e-30 * max(1.0, g @ g):
            break
        d = r.copy()
        hit_bound = False
        for _ in range(n):
            Hd = H @ d
            curv = d @ Hd
            # step to the ball boundary
            a2, b2, c2 = d @ d, 2 * (s @ d), s @ s - delta**2
            a_tr = (-b2 + math.sqrt(max(b2 * b2 - 4 * a2 * c2, 0.0))) / (2 * a2)
            with np.errstate(divide="ignore", invalid="ignore"):
                to_bound = np.where(d > 0, (hi - s) / d, np.where(d < 0, (lo - s) / d, np.inf))
            to_bound[fixed] = np.inf
            ib = int(np.argmin(to_bound))
            a_b = max(float(to_bound[ib]), 0.0)
            rr = r @ r
            a_cg = rr / curv if curv > 0 else np.inf
            a = min(a_cg, a_tr, a_b)
            s = s + a * d
            if a == a_tr:
                return np.clip(s, lo, hi)
            if a == a_b and a_b < a_cg:
                s[ib] = hi[ib] if d[ib] > 0 else lo[ib]
                fixed[ib] = True
                hit_bound = True
                break
            r = r - a * np.where(free, Hd, 0.0)
            if r @ r <= 1e-20 * rr:
                break
            d = r + (r @ r) / rr * d
        if not hit_bound:
            break
    return np.clip(s, lo, hi)


class _DFOState:
    def __init__(self, objective, lo, hi, max_evals, hist):
        self.objective = objective
        self.lo, self.hi = lo, hi
        self.max_evals = max_evals
        self.hist = hist

    def evaluate(self, x):
        x = np.clip(x, self.lo, self.hi)
        try:
            val, comps = _split(self.objective(x))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
            log.debug("objective failed at %s: %s", x, err)
            val, comps = math.nan, {}
        self.hist.add(x, val, comps)
        return x, val

    @property
    def exhausted(self):
        return len(self.hist) >= self.max_evals


def _initial_points(x0, rho, lo, hi):
    n = len(x0)
    pts = [x0.copy()]
    for i in range(n):
        up, down = hi[i] - x0[i], x0[i] - lo[i]
        if up >= rho and down >= rho:
            a, b = rho, -rho
        elif up >= rho:
            a, b = rho, min(2 * rho, up)
        elif down >= rho:
            a, b = -rho, -min(2 * rho, down)
        else:
            # both sides are short; sample the roomier side twice unless the
            # other is comparable, so no point nearly duplicates x0
            if up >= down:
                a, b = (up, -down) if down >= 0.1 * up else (up, up / 2)
            else:
                a, b = (-down, up) if up >= 0.1 * down else (-down, -down / 2)
        for t in (a, b):
            p = x0.copy()
            p[i] += t
            pts.append(p)
    return np.clip(np.array(pts), lo, hi)


def minimize_dfo(objective: Callable, x0, config: OptimizerConfig | None = None) -> OptimizeResult:
    """Minimize ``objective(x) -> value`` (or ``(value, components)``) without derivatives.

    The first trust radius and resolution are ``config.initial_radius``; the run
    ends when the resolution would drop below ``config.tol_step`` or after
    ``config.max_evals`` evaluations.  Trial points with a non-finite
    value are discarded and the radius shrinks.
    """
    config = config or OptimizerConfig.dfo()
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    lo, hi = config.bounds(n)
    x0 = np.clip(x0, lo, hi)
    hist = ConvergenceHistory()
    st = _DFOState(objective, lo, hi, config.max_evals, hist)
    rho_end = config.tol_step
    rho = max(config.initial_radius, rho_end)
    delta = rho

    Y = _initial_points(x0, rho, lo, hi)
    F = np.empty(len(Y))
    for j, p in enumerate(Y):
        if st.exhausted:
            F = F[:j]
            Y = Y[:j]
            break
        Y[j], F[j] = st.evaluate(p)
        if j == 0 and not math.isfinite(F[0]):
            break
    if len(F) == 0 or not math.isfinite(F[0]):
        return OptimizeResult(x0, hist, math.nan, "aborted", "objective not finite at the starting point")
    # points with non-finite values are kept out of the interpolation set
    bad = ~np.isfinite(F)
    if bad.any():
        finite_best = F[0]
        for j in np.flatnonzero(bad):
            # pull the failed point halfway back toward the start
            for _ in range(30):
                Y[j] = x0 + 0.5 * (Y[j] - x0)
                if st.exhausted:
                    break
                Y[j], F[j] = st.evaluate(Y[j])
                if math.isfinite(F[j]):
                    break
            if not math.isfinite(F[j]):
                F[j] = finite_best + 1.0 if math.isfinite(finite_best) else 1.0
    if st.exhausted:
        k = int(np.argmin(F))
        return OptimizeResult(Y[k].copy(), hist, float(F[k]), "max_evals", "evaluation budget exhausted")

    # quadratic model around the best point: f(xk + s) ~ c + g.s + s.H.s/2
    H = np.zeros((n, n))
    model_center = Y[0].copy()
    model_c, model_g = float(F[0]), np.zeros(n)
    status, message = "converged", ""

    def model_eval(x):
        s = x - model_center
        return model_c + model_g @ s + 0.5 * s @ H @ s

    def rebuild(k):
        """Least-Frobenius-change update of the model, re-centred on ``Y[k]``."""
        nonlocal H, model_center, model_c, model_g
        xk = Y[k]
        scale = max(delta, np.max(np.linalg.norm(Y - xk, axis=1)), 1e-300)
        S = (Y - xk) / scale
        resid = F - np.array([model_eval(y) for y in Y])
        W = _kkt_matrix(S)
        rhs = np.concatenate([resid, np.zeros(n + 1)])
        try:
            Winv = np.linalg.inv(W)
        except np.linalg.LinAlgError:
            Winv = np.linalg.pinv(W)
        if not np.all(np.isfinite(Winv)):
            Winv = np.linalg.pinv(W)
        sol = Winv @ rhs
        lam, dc, dg = sol[: len(Y)], sol[len(Y)], sol[len(Y) + 1:]
        g_old = model_g + H @ (xk - model_center)
        c_old = model_eval(xk)
        H = H + (S.T * lam) @ S / scale**2
        H = 0.5 * (H + H.T)
        model_g = g_old + dg / scale
        model_c = c_old + dc
        model_center = xk.copy()
        return Winv, S, scale

    def replace_index(Winv, S, scale, xk, xnew, exclude):
        s = (xnew - xk) / scale
        ell = np.abs(_lagrange_values(Winv, S, s))
        dist = np.linalg.norm(Y - xk, axis=1)
        score = ell * np.maximum(1.0, (dist / max(delta, 1e-300)) ** 2)
        if exclude is not None:
            score[exclude] = -1.0
        return int(np.argmax(score))

    def geometry_point(Winv, S, scale, xk, t, radius):
        cands = []
        for i in range(n):
            for sign in (1.0, -1.0):
                e = np.zeros(n)
                e[i] = sign * radius
                cands.append(e)
        for j in range(len(Y)):
            v = Y[j] - xk
            nv = np.linalg.norm(v)
            if nv > 0:
                cands += [radius * v / nv, -radius * v / nv]
        best, best_val = None, -1.0
        for c in cands:
            p = np.clip(xk + c, lo, hi)
            if np.linalg.norm(p - xk) < 1e-3 * radius:
                continue
            val = abs(_lagrange_values(Winv, S, (p - xk) / scale)[t])
            if val > best_val:
                best, best_val = p, val
        return best

    def reduce_rho():
        nonlocal rho, delta
        old = rho
        if rho <= rho_end:
            return False
        ratio = rho / rho_end
        if ratio > 250:
            rho = 0.1 * rho
        elif ratio > 16:
            rho = math.sqrt(rho * rho_end)
        else:
            rho = rho_end
        delta = max(0.5 * old, rho)
        return True

    def fix_geometry(Winv, S, scale, xk, far):
        nonlocal delta
        p = geometry_point(Winv, S, scale, xk, far, max(0.1 * delta, rho))
        if p is None:
            return False
        p, fp = st.evaluate(p)
        if math.isfinite(fp):
            Y[far], F[far] = p, fp
        else:
            delta = rho
        return True

    while True:
        if st.exhausted:
            status, message = "max_evals", "evaluation budget exhausted"
            break
        k = int(np.argmin(F))
        xk, fk = Y[k].copy(), float(F[k])
        Winv, S, scale = rebuild(k)
        s = trust_region_step(model_g, H, delta, lo - xk, hi - xk)
        snorm = float(np.linalg.norm(s))
        pred = -(model_g @ s + 0.5 * s @ H @ s)
        dist = np.linalg.norm(Y - xk, axis=1)
        far = int(np.argmax(dist))

        if snorm < 0.5 * rho or pred <= 0:
            # no useful step at this radius
            delta = 0.1 * delta
            if delta <= 1.5 * rho:
                delta = rho
            if delta > rho:
                continue
            if dist[far] > 2.0 * rho and fix_geometry(Winv, S, scale, xk, far):
                continue
            if not reduce_rho():
                status, message = "converged", "trust region resolution below tol_step"
                break
            continue

        xnew, fnew = st.evaluate(xk + s)
        if not math.isfinite(fnew):
            delta = max(0.5 * snorm, rho)
            if snorm <= 1.5 * rho and not reduce_rho():
                status, message = "converged", "trust region resolution below tol_step"
                break
            continue
        ratio = (fk - fnew) / pred
        if ratio <= 0.1:
            delta = min(0.5 * delta, snorm)
        elif ratio <= 0.7:
            delta = max(0.5 * delta, snorm)
        else:
            delta = max(0.5 * delta, 2.0 * snorm)
        if delta <= 1.5 * rho:
            delta = rho
        t = replace_index(Winv, S, scale, xk, xnew, None if fnew < fk else k)
        Y[t], F[t] = xnew, fnew
        if ratio > 0.1:
            continue
        # failed step: repair the interpolation set before trusting a smaller radius
        kb = int(np.argmin(F))
        dist = np.linalg.norm(Y - Y[kb], axis=1)
        far = int(np.argmax(dist))
        if dist[far] > 2.0 * delta:
            if st.exhausted:
                continue
            Winv, S, scale = rebuild(kb)
            if fix_geometry(Winv, S, scale, Y[kb].copy(), far):
                continue
        if delta <= rho and snorm <= 1.5 * rho:
            if not reduce_rho():
                status, message = "converged", "trust region resolution below tol_step"
                break

    k = int(np.argmin(F))
    best = hist.best()
    x_best = best.params.copy() if best is not None else Y[k].copy()
    f_best = best.value if best is not None else float(F[k])
    return OptimizeResult(x_best, hist, f_best, status, message)
