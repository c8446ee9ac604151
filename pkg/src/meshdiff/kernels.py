"""Squared-exponential and rational-quadratic covariance kernels."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

KINDS = ("SE", "RQ")


@dataclass(frozen=True)
class Hyperparams:
    sigma: float
    lengthscales: tuple[float, ...]
    alpha: float | None = None

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not ls or any(not v > 0 for v in ls):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind, its hyperparameters and which of them are trained.

    With ``tied_lengthscales`` a single shared lengthscale is trained (and packed)
    instead of one per axis.
    """

    kind: str
    params: Hyperparams
    train_sigma: bool = False
    train_lengthscales: bool = True
    train_alpha: bool = True
    tied_lengthscales: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if (self.kind == "RQ") != (self.params.alpha is not None):
            raise ValueError("alpha must be given for RQ kernels and only for them")
        if self.tied_lengthscales and len(set(self.params.lengthscales)) > 1:
            raise ValueError("tied lengthscales must start equal")

    @property
    def dims(self) -> int:
        return len(self.params.lengthscales)

    def with_params(self, **kw) -> KernelSpec:
        return replace(self, params=replace(self.params, **kw))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "sigma": self.params.sigma,
            "lengthscales": list(self.params.lengthscales),
            "train_sigma": self.train_sigma,
        }
        if self.kind == "RQ":
            d["alpha"] = self.params.alpha
        if self.tied_lengthscales:
            d["tied_lengthscales"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict, dims: int | None = None) -> KernelSpec:
        ls = d.get("lengthscales", 1.0)
        ls = np.atleast_1d(np.asarray(ls, dtype=float))
        if dims is not None and len(ls) == 1:
            ls = np.repeat(ls, dims)
        return cls(
            kind=d["kind"],
            params=Hyperparams(float(d.get("sigma", 0.15)), tuple(ls), d.get("alpha")),
            train_sigma=bool(d.get("train_sigma", False)),
            tied_lengthscales=bool(d.get("tied_lengthscales", False)),
        )


def _scaled_sqdist(spec: KernelSpec, A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    ls = np.asarray(spec.params.lengthscales)
    if A.shape[1] != len(ls) or B.shape[1] != len(ls):
        raise ValueError(
            f"point dimension {A.shape[1]}/{B.shape[1]} does not match {len(ls)} lengthscales"
        )
    # (a - b)**2 == (b - a)**2 in floating point, so K(X, X) is exactly symmetric
    return cdist(A / ls, B / ls, "sqeuclidean")


def profile(kind: str, r2, alpha=None):
    """Kernel as a function of the scaled squared distance, without the sigma**2 factor."""
    if kind == "SE":
        return np.exp(-0.5 * r2)
    return (1.0 + r2 / (2.0 * alpha)) ** (-alpha)


def kernel_matrix(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Pairwise covariances ``K[i, j] = k(A[i], B[j])``."""
    B = A if B is None else B
    r2 = _scaled_sqdist(spec, A, B)
    return spec.params.sigma**2 * profile(spec.kind, r2, spec.params.alpha)


def kernel_eval(spec: KernelSpec, x, xp) -> float:
    return float(kernel_matrix(spec, np.reshape(x, (1, -1)), np.reshape(xp, (1, -1)))[0, 0])


def kernel_diag(spec: KernelSpec, A) -> np.ndarray:
    return np.full(len(np.atleast_2d(A)), spec.params.sigma**2)


# Log-space packing of the trainable hyperparameters, in the fixed order
# sigma, lengthscales, alpha.


def param_names(spec: KernelSpec) -> list[str]:
    names = []
    if spec.train_sigma:
        names.append("sigma")
    if spec.train_lengthscales:
        if spec.tied_lengthscales:
            names.append("lengthscale")
        else:
            names += [f"lengthscale_{k + 1}" for k in range(spec.dims)]
    if spec.kind == "RQ" and spec.train_alpha:
        names.append("alpha")
    return names


def pack_raw(spec: KernelSpec) -> np.ndarray:
    p = spec.params
    out = []
    if spec.train_sigma:
        out.append(p.sigma)
    if spec.train_lengthscales:
        out += [p.lengthscales[0]] if spec.tied_lengthscales else list(p.lengthscales)
    if spec.kind == "RQ" and spec.train_alpha:
        out.append(p.alpha)
    return np.array(out, dtype=float)


def unpack_raw(spec: KernelSpec, x) -> KernelSpec:
    x = list(np.asarray(x, dtype=float))
    kw = {}
    if spec.train_sigma:
        kw["sigma"] = x.pop(0)
    if spec.train_lengthscales:
        if spec.tied_lengthscales:
            kw["lengthscales"] = (x.pop(0),) * spec.dims
        else:
            kw["lengthscales"] = tuple(x[: spec.dims])
            x = x[spec.dims :]
    if spec.kind == "RQ" and spec.train_alpha:
        kw["alpha"] = x.pop(0)
    return spec.with_params(**kw)


def pack_log(spec: KernelSpec) -> np.ndarray:
    raw = pack_raw(spec)
    if np.any(raw <= 0):
        raise ValueError("cannot log-pack non-positive parameters")
    return np.log(raw)


def unpack_log(spec: KernelSpec, x) -> KernelSpec:
    # an overflowing lengthscale is the limit where that axis is ignored
    with np.errstate(over="ignore"):
        return unpack_raw(spec, np.exp(np.asarray(x, dtype=float)))


def matrix_and_log_derivatives(spec: KernelSpec, A):
    """``K(A, A)`` and ``dK/dlog(theta_j)`` for every packed parameter."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    p = spec.params
    ls = np.asarray(p.lengthscales)
    sq = [cdist(A[:, k:k + 1] / ls[k], A[:, k:k + 1] / ls[k], "sqeuclidean") for k in range(len(ls))]
    r2 = np.sum(sq, axis=0)
    s2 = p.sigma**2
    if spec.kind == "SE":
        K = s2 * np.exp(-0.5 * r2)
        # dK/dlog l_k = K * (x_k - x'_k)^2 / l_k^2
        dshape = K
    else:
        a = p.alpha
        base = 1.0 + r2 / (2.0 * a)
        K = s2 * base ** (-a)
        dshape = s2 * base ** (-a - 1)
    grads = []
    if spec.train_sigma:
        grads.append(2.0 * K)
    if spec.train_lengthscales:
        if spec.tied_lengthscales:
            grads.append(dshape * r2)
        else:
            grads += [dshape * sq[k] for k in range(spec.dims)]
    if spec.kind == "RQ" and spec.train_alpha:
        a = p.alpha
        base = 1.0 + r2 / (2.0 * a)
        # d/dlog a of base^-a = a * base^-a * (r2/(2 a base) - log base)
        grads.append(K * a * (r2 / (2.0 * a * base) - np.log(base)))
    return K, grads
