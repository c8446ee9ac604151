"""Structured training meshes, normalization and the cell-centroid staggered mesh.

Values are stored row-major with axis 0 slowest, so ``values.ravel()`` lines up
with :attr:`StructuredMesh.points`.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Structural problem with a mesh (incomplete product, duplicates, bad axis)."""


class MeshParseError(MeshError):
    """A CSV cell that could not be read as a number."""


@dataclass(frozen=True)
class StructuredMesh:
    axis_coords: tuple[np.ndarray, ...]
    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        coords = tuple(np.asarray(c, dtype=float) for c in self.axis_coords)
        values = np.asarray(self.values, dtype=float)
        if len(coords) == 0:
            raise MeshError("mesh needs at least one axis")
        if values.shape != tuple(len(c) for c in coords):
            raise MeshError(
                f"values shape {values.shape} does not match axis lengths "
                f"{tuple(len(c) for c in coords)}"
            )
        for k, c in enumerate(coords):
            if c.ndim != 1:
                raise MeshError(f"axis {k} coordinates must be 1-d")
            if len(c) > 1 and np.any(np.diff(c) <= 0):
                raise MeshError(f"axis {k} coordinates are not strictly increasing")
        names = tuple(self.names) or tuple(f"x{k + 1}" for k in range(len(coords)))
        for c in coords:
            c.flags.writeable = False
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "axis_coords", coords)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def dims(self) -> int:
        return len(self.axis_coords)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def points(self) -> np.ndarray:
        """All mesh nodes as an ``(n, d)`` array in row-major order."""
        grids = np.meshgrid(*self.axis_coords, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def with_values(self, values) -> StructuredMesh:
        return StructuredMesh(self.axis_coords, np.asarray(values).reshape(self.shape), self.names)

    def transpose(self, order) -> StructuredMesh:
        order = tuple(order)
        return StructuredMesh(
            tuple(self.axis_coords[k] for k in order),
            np.transpose(self.values, order),
            tuple(self.names[k] for k in order),
        )


@dataclass(frozen=True)
class StaggeredMesh:
    """Cell centroids of a structured mesh, one per cell, shape ``n_i - 1`` per axis."""

    shape: tuple[int, ...]
    points: np.ndarray
    predictions: np.ndarray | None = None

    @property
    def s(self) -> int:
        return int(np.prod(self.shape))

    def with_predictions(self, preds) -> StaggeredMesh:
        preds = np.asarray(preds, dtype=float)
        if preds.size != self.s:
            raise MeshError(f"{preds.size} predictions for {self.s} staggered points")
        return StaggeredMesh(self.shape, self.points, preds.reshape(self.shape))


@dataclass(frozen=True)
class Diagonal:
    """A centre-crossing diagonal, stored as the +1/-1 step along each axis."""

    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.offsets or self.offsets[0] != 1 or any(o not in (1, -1) for o in self.offsets):
            raise MeshError(f"invalid diagonal offsets {self.offsets}")

    def __str__(self):
        return "".join("+" if o > 0 else "-" for o in self.offsets)


@dataclass(frozen=True)
class NormalizationRecord:
    coord_scale: tuple[float, ...]
    coord_shift: tuple[float, ...]
    value_scale: float
    value_shift: float
    degenerate: bool = False
    value_floor: float = 0.05
    # raw coordinates, kept for axes whose spacing is not uniform
    raw_axes: tuple = ()

    # normalized = raw * scale + shift
    def to_dict(self) -> dict:
        return {
            "coord_scale": list(self.coord_scale),
            "coord_shift": list(self.coord_shift),
            "value_scale": self.value_scale,
            "value_shift": self.value_shift,
            "degenerate": self.degenerate,
            "value_floor": self.value_floor,
            "raw_axes": [None if a is None else [float(v) for v in a] for a in self.raw_axes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationRecord:
        return cls(
            tuple(d["coord_scale"]),
            tuple(d["coord_shift"]),
            float(d["value_scale"]),
            float(d["value_shift"]),
            bool(d.get("degenerate", False)),
            float(d.get("value_floor", 0.05)),
            tuple(None if a is None else np.asarray(a) for a in d.get("raw_axes", [])),
        )

    def denormalize_values(self, v):
        return (np.asarray(v, dtype=float) - self.value_shift) / self.value_scale

    def denormalize_coords(self, x):
        """Map normalized points ``(..., d)`` back to raw coordinates."""
        x = np.array(x, dtype=float)
        out = (x - np.asarray(self.coord_shift)) / np.asarray(self.coord_scale)
        for k, raw in enumerate(self.raw_axes):
            if raw is not None:
                out[..., k] = np.interp(x[..., k], np.arange(len(raw)), raw)
        return out


def load_mesh_csv(path) -> StructuredMesh:
    """Read a ``x1,...,xd,y`` CSV whose rows form a complete tensor product."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MeshError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise MeshError(f"{path}: need at least one coordinate column and a value column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MeshParseError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise MeshParseError(f"{path}: non-numeric cell in row {lineno}") from None
    if not rows:
        raise MeshError(f"{path}: no data rows")
    return mesh_from_table(np.array(rows), names=tuple(header[:-1]))


def mesh_from_table(table: np.ndarray, names=()) -> StructuredMesh:
    """Place scattered ``(coords..., value)`` rows onto their tensor-product grid."""
    table = np.asarray(table, dtype=float)
    d = table.shape[1] - 1
    axes = [np.unique(table[:, k]) for k in range(d)]
    shape = tuple(len(a) for a in axes)
    idx = tuple(np.searchsorted(axes[k], table[:, k]) for k in range(d))
    flat = np.ravel_multi_index(idx, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape)))
    if np.any(counts > 1):
        dup = np.unravel_index(int(np.argmax(counts > 1)), shape)
        raise MeshError(f"duplicate grid point at multi-index {tuple(int(i) for i in dup)}")
    if np.any(counts == 0):
        miss = np.unravel_index(int(np.argmin(counts)), shape)
        raise MeshError(f"missing grid point at multi-index {tuple(int(i) for i in miss)}")
    values = np.empty(int(np.prod(shape)))
    values[flat] = table[:, d]
    return StructuredMesh(tuple(axes), values.reshape(shape), tuple(names))


def write_mesh_csv(mesh: StructuredMesh, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*mesh.names, "y"])
        for row, v in zip(mesh.points, mesh.values.ravel()):
            w.writerow([repr(float(c)) for c in row] + [repr(float(v))])


def normalize_mesh(mesh: StructuredMesh, value_floor: float = 0.05):
    """Map coordinates to integer indices and values onto ``[value_floor, 1]``.

    Returns the normalized mesh and the :class:`NormalizationRecord` needed to undo it.
    A constant field is mapped to the middle of the target range and flagged
    ``degenerate``.
    """
    if not 0 < value_floor < 1:
        raise ValueError("value_floor must lie in (0, 1)")
    scales, shifts, raw_axes = [], [], []
    for c in mesh.axis_coords:
        raw = None
        if len(c) > 1:
            h = (c[-1] - c[0]) / (len(c) - 1)
            if not np.allclose(np.diff(c), h, rtol=1e-9, atol=0):
                raw = c.copy()
            scale = 1.0 / h
        else:
            scale = 1.0
        scales.append(scale)
        shifts.append(-c[0] * scale)
        raw_axes.append(raw)
    if all(r is None for r in raw_axes):
        raw_axes = []

    v = mesh.values
    vmin, vmax = float(v.min()), float(v.max())
    degenerate = vmax == vmin
    if degenerate:
        vscale = 1.0
        vshift = value_floor + (1.0 - value_floor) / 2 - vmin
    else:
        vscale = (1.0 - value_floor) / (vmax - vmin)
        vshift = value_floor - vmin * vscale

    new_axes = tuple(np.arange(len(c), dtype=float) for c in mesh.axis_coords)
    if degenerate:
        new_values = np.full(mesh.shape, value_floor + (1.0 - value_floor) / 2)
    else:
        new_values = np.clip(v * vscale + vshift, value_floor, 1.0)
    rec = NormalizationRecord(
        tuple(scales), tuple(shifts), vscale, vshift, degenerate, value_floor, tuple(raw_axes)
    )
    return StructuredMesh(new_axes, new_values, mesh.names), rec


def denormalize_mesh(mesh: StructuredMesh, rec: NormalizationRecord) -> StructuredMesh:
    axes = []
    for k, c in enumerate(mesh.axis_coords):
        pts = np.zeros((len(c), mesh.dims))
        pts[:, k] = c
        axes.append(rec.denormalize_coords(pts)[:, k])
    return StructuredMesh(tuple(axes), rec.denormalize_values(mesh.values), mesh.names)


def build_staggered_mesh(mesh: StructuredMesh) -> StaggeredMesh:
    """Centroid of every cell: the mean of its ``2**d`` corner coordinates."""
    for k, n in enumerate(mesh.shape):
        if n < 2:
            raise MeshError(f"no cells along axis {k} (needs at least 2 points)")
    d = mesh.dims
    grids = np.meshgrid(*mesh.axis_coords, indexing="ij")
    cshape = tuple(n - 1 for n in mesh.shape)
    cols = []
    for g in grids:
        acc = np.zeros(cshape)
        for corner in itertools.product((0, 1), repeat=d):
            acc = acc + g[tuple(slice(c, c + m) for c, m in zip(corner, cshape))]
        cols.append((acc / 2**d).ravel())
    return StaggeredMesh(cshape, np.stack(cols, axis=-1))


def enumerate_diagonals(d: int) -> list[Diagonal]:
    """All ``2**(d-1)`` centre-crossing diagonals, first step fixed at +1.

    Ordered lexicographically with +1 before -1.
    """
    if d < 1:
        raise MeshError("dimension must be at least 1")
    return [Diagonal((1, *rest)) for rest in itertools.product((1, -1), repeat=d - 1)]


def interior_multi_indices(mesh_or_shape) -> np.ndarray:
    """Multi-indices with full stencil support, as an ``(n*, d)`` integer array."""
    shape = mesh_or_shape.shape if isinstance(mesh_or_shape, StructuredMesh) else tuple(mesh_or_shape)
    ranges = [np.arange(1, n - 1) for n in shape]
    if any(len(r) == 0 for r in ranges):
        return np.empty((0, len(shape)), dtype=int)
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)
