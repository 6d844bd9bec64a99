import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrxi.geometry import (
    DegenerateGeometryError,
    DipoleActivation,
    Domain,
    PixelGrid,
    SegmentedCoil,
    SensorSpec,
    coil_field,
    dipole_activation_field,
    dipole_tensor,
    segment_field,
)
from oracles import biot_savart_quad, dipole_field_explicit, polygon_field_quad

coord = st.floats(-3, 3, allow_nan=False)
vec = st.tuples(coord, coord, coord).map(np.array)


def _valid(a, b, w):
    ra, rb = a - w, b - w
    na, nb = np.linalg.norm(ra), np.linalg.norm(rb)
    return min(na, nb) > 1e-3 and na * nb + ra @ rb > 1e-3 * na * nb


def test_collinear_outside_is_zero():
    np.testing.assert_array_equal(segment_field((0, 0, 0), (1, 0, 0), (2, 0, 0)), 0.0)


@pytest.mark.parametrize("w", [(0.5, 0, 0), (0, 0, 0), (1, 0, 0)])
def test_point_on_segment_is_degenerate(w):
    with pytest.raises(DegenerateGeometryError):
        segment_field((0, 0, 0), (1, 0, 0), w)


def test_segment_matches_quadrature_example():
    got = segment_field((0, 0, 0), (1, 0, 0), (0.5, 1, 0))
    ref = biot_savart_quad((0, 0, 0), (1, 0, 0), (0.5, 1, 0))
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-8


def test_segment_scale_is_linear():
    a, b, w = (0, 0, 0), (1, 2, 0), (0.3, -1, 0.2)
    np.testing.assert_allclose(segment_field(a, b, w, 2.5), 2.5 * segment_field(a, b, w), rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec)
def test_segment_antisymmetry(a, b, w):
    if not _valid(a, b, w):
        return
    np.testing.assert_allclose(segment_field(a, b, w), -segment_field(b, a, w), rtol=1e-12, atol=1e-300)


@settings(max_examples=50, deadline=None)
@given(vec, vec, st.floats(1.05, 5.0), st.booleans())
def test_collinear_null(a, b, t, beyond_b):
    if np.linalg.norm(b - a) < 1e-2:
        return
    w = a + t * (b - a) if beyond_b else b + t * (a - b)
    assert np.linalg.norm(segment_field(a, b, w)) < 1e-12


def test_single_segment_coil_equals_segment():
    coil = SegmentedCoil([(0, 0, 0), (1, 0.5, 0)], scale=1.7)
    w = (0.2, 0.9, 0.1)
    np.testing.assert_allclose(coil_field(coil, w), segment_field((0, 0, 0), (1, 0.5, 0), w, 1.7), rtol=1e-15)


def test_square_loop_field_is_normal_at_center():
    verts = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 0)]
    coil = SegmentedCoil(verts)
    np.testing.assert_allclose(coil.moment, 0.0)
    b = coil_field(coil, (0.5, 0.5, 0))
    assert np.all(np.abs(b[:2]) < 1e-12)
    assert abs(b[2]) > 1


def test_polygon_matches_quadrature():
    coil = SegmentedCoil.circle((0.5, -0.4, 0.1), (0.3, 1.0, 0.2), 0.2, n_segments=12)
    w = np.array([0.4, 0.3, 0.0])
    ref = polygon_field_quad(coil.vertices, w)
    assert np.linalg.norm(coil_field(coil, w) - ref) / np.linalg.norm(ref) < 1e-8


def test_circle_refinement_is_cauchy():
    w = (0.3, 0.6, 0.0)
    b = {l: coil_field(SegmentedCoil.circle((0.5, -0.3, 0), (0, 1, 0), 0.15, l), w) for l in (8, 32, 128)}
    assert np.linalg.norm(b[128] - b[32]) < np.linalg.norm(b[32] - b[8])


def test_dipole_axial_and_equatorial_examples():
    act = DipoleActivation((0, 0, 0), (1, 0, 0))
    np.testing.assert_allclose(dipole_activation_field(act, (1, 0, 0)), (2, 0, 0), atol=1e-15)
    np.testing.assert_allclose(dipole_activation_field(act, (0, 1, 0)), (-1, 0, 0), atol=1e-15)


def test_dipole_cubic_decay():
    act = DipoleActivation((0.1, -0.2, 0.3), (0.3, 0.5, -0.2), scale=2.0)
    ray = np.array([0.4, 0.7, -0.1])
    for d in (0.5, 1.0, 3.0):
        near = np.linalg.norm(dipole_activation_field(act, act.position + d * ray))
        far = np.linalg.norm(dipole_activation_field(act, act.position + 2 * d * ray))
        assert abs(far - near / 8) <= 1e-12 * near / 8


def test_dipole_coincident_point_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        dipole_activation_field(DipoleActivation((0, 0, 0), (0, 0, 1)), (0, 0, 0))


@settings(max_examples=50, deadline=None)
@given(vec, vec, st.floats(0.1, 10.0))
def test_axial_equatorial_ratio(y, eta, d):
    if np.linalg.norm(eta) < 1e-2:
        return
    e = eta / np.linalg.norm(eta)
    perp = np.cross(e, [1.0, 0, 0])
    if np.linalg.norm(perp) < 0.1:
        perp = np.cross(e, [0, 1.0, 0])
    perp /= np.linalg.norm(perp)
    act = DipoleActivation(y, eta)
    axial = dipole_activation_field(act, y + d * e) @ e
    equat = dipole_activation_field(act, y + d * perp) @ e
    assert abs(axial / equat + 2.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(vec, vec, vec)
def test_dipole_matches_explicit_tensor(y, eta, w):
    if np.linalg.norm(w - y) < 1e-2 or np.linalg.norm(eta) < 1e-3:
        return
    got = dipole_activation_field(DipoleActivation(y, eta), w)
    ref = dipole_field_explicit(y, eta, w)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12 * np.linalg.norm(ref))
    np.testing.assert_allclose(dipole_tensor(w - y) @ eta, ref, rtol=1e-12, atol=1e-12 * np.linalg.norm(ref))


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec)
def test_triple_product_identity(a, b, eta):
    lhs = abs(a @ np.cross(eta, b))
    rhs = abs(b @ np.cross(eta, a))
    scale = max(1.0, np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(eta))
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_planar_fields_have_no_out_of_plane_component():
    act = DipoleActivation((-0.15, 0.4), (1.0, 0.2))
    grid = PixelGrid.square(9)
    assert np.all(act.field_at(grid.midpoints())[:, 2] == 0.0)


def test_sensor_orientation_must_be_unit():
    SensorSpec((0, -0.1, 0), (0, 1, 0))
    with pytest.raises(ValueError):
        SensorSpec((0, -0.1, 0), (0, 1.001, 0))


def test_domain_shell():
    dom = Domain(standoff=0.15)
    assert dom.in_shell((0.5, -0.15))
    assert not dom.in_shell((0.5, 0.5))
    assert not dom.in_shell((0.5, -0.3))
    with pytest.raises(ValueError):
        dom.check_outside([(0.5, -0.2), (0.5, 0.5)])
    with pytest.raises(ValueError):
        Domain(standoff=0.0)


@pytest.mark.parametrize("shape", [(4, 7), (3, 2, 5)])
def test_grid_cells_tile_domain(shape):
    lower = (0.0,) * len(shape)
    upper = tuple(1.0 + 0.5 * i for i in range(len(shape)))
    g = PixelGrid(shape, lower, upper)
    assert g.n_cells * g.cell_measure == pytest.approx(np.prod(upper), rel=1e-14)
    pts = g.midpoints()
    assert pts.shape == (g.n_cells, 3)
    assert len({tuple(p) for p in pts}) == g.n_cells
    for ax in range(len(shape)):
        assert np.all(pts[:, ax] > lower[ax]) and np.all(pts[:, ax] < upper[ax])
    assert PixelGrid.from_descriptor(g.descriptor()) == g


def test_grid_cell_order_is_row_major_in_y():
    pts = PixelGrid((2, 3)).midpoints()
    # second cell moves along x, fourth starts the next row in y
    assert pts[1, 0] > pts[0, 0] and pts[1, 1] == pts[0, 1]
    assert pts[3, 1] > pts[0, 1] and pts[3, 0] == pts[0, 0]
