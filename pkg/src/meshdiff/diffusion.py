"""Undivided-Laplacian diffusion sensors and the diffusion loss.

The *true* sensor is a three-point second difference along each centre-crossing
diagonal of a training node, normalized by the matching sum of values.  The
*staggered* sensor replaces the centre node by the two cell centroids the
diagonal passes through, so oscillations inside a cell show up in it even when
the model interpolates the training data exactly.

Everything here is vectorized by array slicing over the interior nodes; the
loop versions in the test suite are the reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gpr
from .mesh import Diagonal, StaggeredMesh, StructuredMesh, enumerate_diagonals

EPS_GUARD = 1e-12


class SensorError(ValueError):
    pass


@dataclass(frozen=True)
class SensorField:
    diagonals: tuple[Diagonal, ...]
    per_diagonal: tuple[np.ndarray, ...]
    total: np.ndarray

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return self.total.shape

    def restrict(self, diagonals) -> SensorField:
        """Keep only ``diagonals`` (order as given), re-summing the total."""
        lookup = {dg.offsets: arr for dg, arr in zip(self.diagonals, self.per_diagonal)}
        missing = [dg for dg in diagonals if dg.offsets not in lookup]
        if missing:
            raise SensorError(f"diagonals {[str(m) for m in missing]} not in field")
        parts = tuple(lookup[dg.offsets] for dg in diagonals)
        return SensorField(tuple(diagonals), parts, _sum_fixed(parts, self.total.shape))


@dataclass(frozen=True)
class LossReport:
    rmse_training: float
    rmse_diffusion: float
    beta1: float = 1.0
    beta2: float = 1.0

    @property
    def total(self) -> float:
        return self.beta1 * self.rmse_training + self.beta2 * self.rmse_diffusion

    def to_dict(self) -> dict:
        return {
            "rmse_training": self.rmse_training,
            "rmse_diffusion": self.rmse_diffusion,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "total": self.total,
        }


def _sum_fixed(parts, shape):
    out = np.zeros(shape)
    for p in parts:
        out = out + p
    return out


def _node(F, offsets):
    """View of ``F`` at interior nodes shifted by ``offsets`` (each -1, 0 or +1)."""
    return F[tuple(slice(1 + o, n - 1 + o) for o, n in zip(offsets, F.shape))]


def _cell(S, offsets):
    """Centroid of the cell touching each interior node on the ``offsets`` side."""
    return S[tuple(slice(1, m) if o > 0 else slice(0, m - 1) for o, m in zip(offsets, S.shape))]


def _ratio(num, den):
    if np.any(den <= EPS_GUARD):
        raise SensorError("non-positive stencil sum; sensor values must be positive")
    return np.abs(num) / den


def _diagonals(d, diagonals):
    return tuple(enumerate_diagonals(d)) if diagonals is None else tuple(diagonals)


def _scale_true(spacing, appendix_scaling):
    return (1.0 / 3.0 if appendix_scaling else 1.0) / spacing**2


def _scale_staggered(spacing, appendix_scaling):
    return (1.0 / 3.0 if appendix_scaling else 1.0) / (3.0 * (spacing / 2.0) ** 2)


def true_sensor_array(values, spacing=1.0, diagonals=None, appendix_scaling=False) -> SensorField:
    """Sensor of a value tensor on its own nodes, one term per diagonal."""
    F = np.asarray(values, dtype=float)
    if any(n < 3 for n in F.shape):
        raise SensorError(f"every axis needs at least 3 points, got shape {F.shape}")
    diags = _diagonals(F.ndim, diagonals)
    c = _node(F, (0,) * F.ndim)
    scale = _scale_true(spacing, appendix_scaling)
    parts = []
    for dg in diags:
        p = _node(F, dg.offsets)
        m = _node(F, tuple(-o for o in dg.offsets))
        parts.append(scale * _ratio(p - 2.0 * c + m, p + 2.0 * c + m))
    parts = tuple(parts)
    return SensorField(diags, parts, _sum_fixed(parts, c.shape))


def sensor_true_md(mesh: StructuredMesh, spacing=1.0, diagonals=None, appendix_scaling=False) -> SensorField:
    return true_sensor_array(mesh.values, spacing, diagonals, appendix_scaling)


def sensor_staggered_md(mesh_preds, stag_preds, spacing=1.0, diagonals=None,
                        appendix_scaling=False) -> SensorField:
    """Staggered sensor from predictions at the nodes and at the cell centroids."""
    F = np.asarray(mesh_preds, dtype=float)
    S = np.asarray(stag_preds, dtype=float)
    if S.shape != tuple(n - 1 for n in F.shape):
        raise SensorError(f"staggered shape {S.shape} does not match node shape {F.shape}")
    if any(n < 3 for n in F.shape):
        raise SensorError(f"every axis needs at least 3 points, got shape {F.shape}")
    diags = _diagonals(F.ndim, diagonals)
    scale = _scale_staggered(spacing, appendix_scaling)
    parts = []
    for dg in diags:
        neg = tuple(-o for o in dg.offsets)
        p, m = _node(F, dg.offsets), _node(F, neg)
        hp, hm = _cell(S, dg.offsets), _cell(S, neg)
        parts.append(scale * _ratio(p - hp - hm + m, p + hp + hm + m))
    parts = tuple(parts)
    return SensorField(diags, parts, _sum_fixed(parts, parts[0].shape))


def second_difference(values, offsets) -> np.ndarray:
    """Signed undivided second difference ``y(+o) - 2 y + y(-o)`` at interior nodes."""
    F = np.asarray(values, dtype=float)
    neg = tuple(-o for o in offsets)
    return _node(F, offsets) - 2.0 * _node(F, (0,) * F.ndim) + _node(F, neg)


def diagonal_laplacian(values) -> np.ndarray:
    """Sum of second differences over all centre-crossing diagonals."""
    F = np.asarray(values, dtype=float)
    return _sum_fixed([second_difference(F, dg.offsets) for dg in enumerate_diagonals(F.ndim)],
                      tuple(n - 2 for n in F.shape))


def coordinate_laplacian(values) -> np.ndarray:
    """Sum of second differences along the coordinate axes (the usual 2d+1 stencil)."""
    F = np.asarray(values, dtype=float)
    axes = [tuple(1 if j == k else 0 for j in range(F.ndim)) for k in range(F.ndim)]
    return _sum_fixed([second_difference(F, o) for o in axes], tuple(n - 2 for n in F.shape))


def sensor_1d_true(values, spacing=1.0) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) < 3:
        raise SensorError("need a 1-d array of at least 3 values")
    return true_sensor_array(v, spacing).total


def sensor_1d_staggered(pred_orig, pred_stag, spacing=1.0) -> np.ndarray:
    f = np.asarray(pred_orig, dtype=float)
    s = np.asarray(pred_stag, dtype=float)
    if f.ndim != 1 or s.ndim != 1 or len(s) != len(f) - 1:
        raise SensorError("staggered predictions must have one entry fewer than node predictions")
    return sensor_staggered_md(f, s, spacing).total


def select_top_diagonals(field: SensorField, d: int) -> list[Diagonal]:
    """The ``d`` diagonals with the largest mean sensor value.

    Ties are broken by enumeration order, and the selection is returned in
    enumeration order so that summation order stays fixed.  Both sensors in a
    loss must be restricted to the same selection.
    """
    if d > len(field.diagonals):
        raise SensorError(f"cannot select {d} of {len(field.diagonals)} diagonals")
    means = np.array([float(np.mean(a)) for a in field.per_diagonal])
    chosen = sorted(np.argsort(-means, kind="stable")[:d])
    return [field.diagonals[i] for i in chosen]


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.sqrt(np.mean((a - b) ** 2)))


def diffusion_loss(model: gpr.GPModel, mesh: StructuredMesh, stag: StaggeredMesh,
                   true_label: SensorField, beta1=1.0, beta2=1.0, spacing=1.0,
                   appendix_scaling=False) -> LossReport:
    """Weighted sum of the training RMSE and the diffusion-sensor RMSE.

    ``model`` must have been fit on ``mesh.points`` in row-major order.  The
    staggered sensor uses the same diagonals as ``true_label``.
    """
    if beta1 < 0 or beta2 < 0:
        raise ValueError("loss weights must be non-negative")
    f_orig = gpr.predict_train(model).reshape(mesh.shape)
    f_stag = gpr.predict_mean(model, stag.points).reshape(stag.shape)
    test = sensor_staggered_md(f_orig, f_stag, spacing, true_label.diagonals, appendix_scaling)
    return LossReport(
        rmse(mesh.values, f_orig),
        rmse(true_label.total, test.total),
        float(beta1),
        float(beta2),
    )


def predicted_sensor(model: gpr.GPModel, mesh: StructuredMesh, stag: StaggeredMesh,
                     diagonals=None, spacing=1.0, appendix_scaling=False) -> SensorField:
    f_orig = gpr.predict_train(model).reshape(mesh.shape)
    f_stag = gpr.predict_mean(model, stag.points).reshape(stag.shape)
    return sensor_staggered_md(f_orig, f_stag, spacing, diagonals, appendix_scaling)
