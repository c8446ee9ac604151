"""Exact zero-mean Gaussian-process regression with a fixed (tiny) noise term."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .kernels import KernelSpec, kernel_diag, kernel_matrix, matrix_and_log_derivatives

log = logging.getLogger(__name__)

NOISELESS_JITTER = 1e-10
MAX_JITTER = 1e-6


class CholeskyError(np.linalg.LinAlgError):
    def __init__(self, pivot: int, noise: float):
        self.pivot = pivot
        self.noise = noise
        super().__init__(f"covariance not positive definite at pivot {pivot} (noise={noise:g})")


@dataclass(frozen=True)
class GPModel:
    train_points: np.ndarray
    train_values: np.ndarray
    spec: KernelSpec
    noise: float
    chol: np.ndarray
    weights: np.ndarray
    # K(X, X) without the noise term, kept because predicting at the training
    # points is needed on every diffusion-loss evaluation
    gram: np.ndarray

    @property
    def n(self) -> int:
        return len(self.train_values)


def _cholesky(A: np.ndarray, noise: float) -> np.ndarray:
    L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise CholeskyError(int(info) - 1, noise)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return L


def fit(points, values, spec: KernelSpec, noise: float = NOISELESS_JITTER) -> GPModel:
    """Factorize ``K + noise*I`` and precompute ``(K + noise*I)^-1 y``.

    Raises :class:`CholeskyError` (carrying the failing pivot) when the matrix is
    not numerically positive definite.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float).ravel()
    if len(y) < 1 or len(y) != len(X):
        raise ValueError("need one value per training point")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if not np.all(np.isfinite(y)):
        raise ValueError("training values must be finite")
    K = kernel_matrix(spec, X)
    A = K.copy()
    A[np.diag_indices_from(A)] += noise
    L = _cholesky(A, noise)
    w = lapack.dpotrs(L, y, lower=1)[0]
    return GPModel(X, y, spec, noise, L, w, K)


def fit_with_jitter(points, values, spec: KernelSpec, noise: float = NOISELESS_JITTER,
                    max_noise: float = MAX_JITTER) -> GPModel:
    """:func:`fit`, escalating the noise tenfold on factorization failure up to ``max_noise``."""
    while True:
        try:
            return fit(points, values, spec, noise)
        except CholeskyError as err:
            nxt = noise * 10 if noise > 0 else NOISELESS_JITTER
            if nxt > max_noise * (1 + 1e-9):
                raise
            log.info("%s; retrying with noise %g", err, nxt)
            noise = nxt


def predict_mean(model: GPModel, query) -> np.ndarray:
    Ks = kernel_matrix(model.spec, query, model.train_points)
    return Ks @ model.weights


def predict_train(model: GPModel) -> np.ndarray:
    """Posterior mean at the training points, reusing the stored Gram matrix."""
    return model.gram @ model.weights


def predict_var(model: GPModel, query, return_clamped: bool = False):
    """Pointwise posterior variance; negative round-off is clamped to zero.

    With ``return_clamped`` also returns the number of clamped entries and the
    largest clamped magnitude.
    """
    Ks = kernel_matrix(model.spec, query, model.train_points)
    V = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = kernel_diag(model.spec, query) - np.einsum("ij,ij->j", V, V)
    neg = var < 0
    n_clamped = int(neg.sum())
    worst = float(-var[neg].min()) if n_clamped else 0.0
    if n_clamped:
        log.debug("clamped %d negative variances (worst %.3g)", n_clamped, worst)
    var = np.where(neg, 0.0, var)
    if return_clamped:
        return var, n_clamped, worst
    return var


def lml_terms(model: GPModel) -> tuple[float, float, float]:
    """Data-fit, complexity and normalization terms of the log marginal likelihood."""
    y = model.train_values
    fit_term = -0.5 * float(y @ model.weights)
    complexity = -float(np.sum(np.log(np.diag(model.chol))))
    const = -0.5 * model.n * np.log(2.0 * np.pi)
    return fit_term, complexity, const


def log_marginal_likelihood(model: GPModel) -> float:
    a, b, c = lml_terms(model)
    return a + b + c


def lml_gradient(model: GPModel) -> np.ndarray:
    """Gradient of the LML with respect to the log of each trainable parameter."""
    K, dKs = matrix_and_log_derivatives(model.spec, model.train_points)
    if not dKs:
        return np.zeros(0)
    Kinv, info = lapack.dpotri(model.chol, lower=1)
    if info != 0:
        raise CholeskyError(max(int(info) - 1, 0), model.noise)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    w = model.weights
    A = np.outer(w, w) - Kinv
    return np.array([0.5 * np.einsum("ij,ij->", A, dK) for dK in dKs])
