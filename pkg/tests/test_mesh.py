import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshdiff.mesh import (
    Diagonal,
    MeshError,
    MeshParseError,
    NormalizationRecord,
    StructuredMesh,
    build_staggered_mesh,
    denormalize_mesh,
    enumerate_diagonals,
    interior_multi_indices,
    load_mesh_csv,
    mesh_from_table,
    normalize_mesh,
    write_mesh_csv,
)


def write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- loading ---------------------------------------------------------------


def test_four_row_file_places_values(tmp_path):
    p = write(tmp_path, "x1,x2,y\n1,1,3\n0,0,1\n1,0,2\n0,1,2\n")
    m = load_mesh_csv(p)
    assert m.shape == (2, 2)
    np.testing.assert_array_equal(m.values, [[1, 2], [2, 3]])
    assert m.names == ("x1", "x2")


def test_missing_grid_point_is_reported(tmp_path):
    p = write(tmp_path, "x1,x2,y\n0,0,1\n0,1,2\n1,1,3\n")
    with pytest.raises(MeshError, match="missing grid point at multi-index \\(1, 0\\)"):
        load_mesh_csv(p)


def test_duplicate_grid_point_is_reported(tmp_path):
    p = write(tmp_path, "x1,y\n0,1\n1,2\n1,3\n")
    with pytest.raises(MeshError, match="duplicate grid point"):
        load_mesh_csv(p)


def test_non_numeric_cell_names_the_row(tmp_path):
    p = write(tmp_path, "x1,y\n0,1\n1,abc\n")
    with pytest.raises(MeshParseError, match="row 3"):
        load_mesh_csv(p)


def test_ragged_row_and_empty_file(tmp_path):
    with pytest.raises(MeshParseError, match="row 2"):
        load_mesh_csv(write(tmp_path, "x1,y\n0,1,2\n"))
    with pytest.raises(MeshError, match="empty"):
        load_mesh_csv(write(tmp_path, "", "e.csv"))
    with pytest.raises(MeshError, match="no data rows"):
        load_mesh_csv(write(tmp_path, "x1,y\n", "h.csv"))


def test_synthetic_sized_file_round_trips(tmp_path):
    axes = (np.linspace(0, 1, 19), np.linspace(0, 2, 15), np.linspace(3, 4, 5))
    vals = np.random.default_rng(0).uniform(size=(19, 15, 5))
    m = StructuredMesh(axes, vals, ("a", "b", "c"))
    p = tmp_path / "big.csv"
    write_mesh_csv(m, p)
    assert len(p.read_text().splitlines()) == 1426
    back = load_mesh_csv(p)
    assert back.shape == (19, 15, 5)
    np.testing.assert_array_equal(back.values, vals)
    for a, b in zip(back.axis_coords, axes):
        np.testing.assert_array_equal(a, b)


def test_row_order_is_free():
    rng = np.random.default_rng(1)
    pts = np.array(list(itertools.product(range(3), range(4))), dtype=float)
    vals = pts[:, 0] * 10 + pts[:, 1]
    table = np.column_stack([pts, vals])
    m1 = mesh_from_table(table)
    m2 = mesh_from_table(table[rng.permutation(len(table))])
    np.testing.assert_array_equal(m1.values, m2.values)


def test_points_are_row_major_axis0_slowest():
    m = StructuredMesh((np.arange(2.0), np.arange(3.0)), np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(m.points[:4], [[0, 0], [0, 1], [0, 2], [1, 0]])
    np.testing.assert_array_equal(m.values.ravel(), np.arange(6.0))


def test_mesh_rejects_bad_construction():
    with pytest.raises(MeshError, match="shape"):
        StructuredMesh((np.arange(3.0),), np.zeros(4))
    with pytest.raises(MeshError, match="strictly increasing"):
        StructuredMesh((np.array([0.0, 0.0, 1.0]),), np.zeros(3))


def test_mesh_is_immutable():
    m = StructuredMesh((np.arange(3.0),), np.ones(3))
    with pytest.raises(ValueError):
        m.values[0] = 5.0


# -- normalization ---------------------------------------------------------


def test_axis_coords_map_to_indices():
    m = StructuredMesh((np.array([0.0, 0.5, 1.0]),), np.array([0.0, 0.5, 1.0]))
    norm, _ = normalize_mesh(m)
    np.testing.assert_allclose(norm.axis_coords[0], [0, 1, 2])


def test_values_map_onto_floor_and_one():
    m = StructuredMesh((np.array([0.0, 0.5, 1.0]),), np.array([0.0, 0.5, 1.0]))
    norm, rec = normalize_mesh(m, 0.05)
    # v * 0.95 + 0.05
    np.testing.assert_allclose(norm.values, [0.05, 0.525, 1.0], rtol=0, atol=1e-15)
    assert not rec.degenerate


def test_unit_range_values_are_still_shifted_positive():
    m = StructuredMesh((np.arange(4.0),), np.array([0.0, 0.2, 0.7, 1.0]))
    norm, _ = normalize_mesh(m)
    assert norm.values.min() == pytest.approx(0.05)


def test_constant_field_is_flagged_not_rejected():
    m = StructuredMesh((np.arange(3.0),), np.full(3, 7.0))
    norm, rec = normalize_mesh(m, 0.05)
    assert rec.degenerate
    np.testing.assert_allclose(norm.values, 0.525)
    np.testing.assert_allclose(denormalize_mesh(norm, rec).values, 7.0)


def test_value_floor_must_be_in_unit_interval():
    m = StructuredMesh((np.arange(3.0),), np.arange(3.0))
    with pytest.raises(ValueError):
        normalize_mesh(m, 0.0)


def test_non_uniform_axis_keeps_raw_coordinates():
    m = StructuredMesh((np.array([0.0, 1.0, 3.0]), np.arange(2.0)), np.arange(6.0).reshape(3, 2))
    norm, rec = normalize_mesh(m)
    np.testing.assert_array_equal(norm.axis_coords[0], [0, 1, 2])
    back = denormalize_mesh(norm, rec)
    np.testing.assert_allclose(back.axis_coords[0], [0, 1, 3])
    np.testing.assert_allclose(back.values, m.values, rtol=1e-12)


def test_record_serializes():
    m = StructuredMesh((np.linspace(10, 20, 5), np.array([0.0, 1.0, 3.0])),
                       np.arange(15.0).reshape(5, 3))
    _, rec = normalize_mesh(m)
    again = NormalizationRecord.from_dict(rec.to_dict())
    assert again.to_dict() == rec.to_dict()


@given(
    st.lists(st.integers(2, 6), min_size=1, max_size=3),
    st.floats(-1e3, 1e3),
    st.floats(1e-2, 1e3),
    st.integers(0, 2**31 - 1),
)
def test_normalize_round_trip(shape, origin, span, seed):
    rng = np.random.default_rng(seed)
    axes = tuple(origin + span * np.linspace(0, 1, n) for n in shape)
    vals = rng.normal(size=shape) * span + origin
    m = StructuredMesh(axes, vals)
    norm, rec = normalize_mesh(m)
    back = denormalize_mesh(norm, rec)
    scale = max(1.0, float(np.max(np.abs(vals))))
    np.testing.assert_allclose(back.values, vals, rtol=1e-12, atol=1e-12 * scale)
    for a, b in zip(back.axis_coords, axes):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * max(1.0, abs(origin) + span))


# -- staggered mesh ----------------------------------------------------------


def test_unit_cube_centroid():
    m = StructuredMesh((np.arange(2.0),) * 3, np.ones((2, 2, 2)))
    s = build_staggered_mesh(m)
    assert s.shape == (1, 1, 1)
    np.testing.assert_array_equal(s.points, [[0.5, 0.5, 0.5]])


def test_one_dimensional_midpoints():
    s = build_staggered_mesh(StructuredMesh((np.arange(3.0),), np.ones(3)))
    np.testing.assert_array_equal(s.points[:, 0], [0.5, 1.5])


def test_synthetic_sized_staggered_mesh():
    m = StructuredMesh(tuple(np.arange(float(n)) for n in (19, 15, 5)), np.ones((19, 15, 5)))
    s = build_staggered_mesh(m)
    assert s.shape == (18, 14, 4)
    assert s.s == 1008
    assert np.all(np.mod(s.points, 1.0) == 0.5)


def test_staggered_needs_two_points_per_axis():
    with pytest.raises(MeshError, match="no cells along axis 1"):
        build_staggered_mesh(StructuredMesh((np.arange(3.0), np.arange(1.0)), np.ones((3, 1))))


@given(st.lists(st.integers(2, 5), min_size=1, max_size=4), st.randoms(use_true_random=False))
def test_staggered_count_and_axis_permutation(shape, rnd):
    axes = tuple(np.cumsum(np.arange(1.0, n + 1)) for n in shape)
    m = StructuredMesh(axes, np.ones(shape))
    s = build_staggered_mesh(m)
    assert s.s == int(np.prod([n - 1 for n in shape]))
    order = list(range(len(shape)))
    rnd.shuffle(order)
    sp = build_staggered_mesh(m.transpose(order))
    want = s.points.reshape(*s.shape, -1).transpose(*order, len(order))[..., order]
    np.testing.assert_array_equal(sp.points, want.reshape(-1, len(order)))


def test_staggered_predictions_shape_checked():
    s = build_staggered_mesh(StructuredMesh((np.arange(3.0),), np.ones(3)))
    assert s.with_predictions([1.0, 2.0]).predictions.shape == (2,)
    with pytest.raises(MeshError):
        s.with_predictions([1.0])


# -- diagonals and interior --------------------------------------------------


def test_diagonal_enumeration_small_cases():
    assert [d.offsets for d in enumerate_diagonals(1)] == [(1,)]
    assert [d.offsets for d in enumerate_diagonals(2)] == [(1, 1), (1, -1)]
    three = [d.offsets for d in enumerate_diagonals(3)]
    assert three == [(1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1)]
    assert str(enumerate_diagonals(3)[2]) == "+-+"


@pytest.mark.parametrize("d", range(1, 9))
def test_diagonals_have_no_antipodal_pairs(d):
    diags = [dg.offsets for dg in enumerate_diagonals(d)]
    assert len(diags) == 2 ** (d - 1)
    assert len(set(diags)) == len(diags)
    for dg in diags:
        assert tuple(-o for o in dg) not in diags


def test_diagonal_validation():
    with pytest.raises(MeshError):
        enumerate_diagonals(0)
    with pytest.raises(MeshError):
        Diagonal((-1, 1))
    with pytest.raises(MeshError):
        Diagonal((1, 0))


def test_interior_counts():
    assert len(interior_multi_indices((19, 15, 5))) == 17 * 13 * 3 == 663
    np.testing.assert_array_equal(interior_multi_indices((3, 3)), [[1, 1]])
    assert len(interior_multi_indices((2, 5))) == 0
