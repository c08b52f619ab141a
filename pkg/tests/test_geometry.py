import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeshadow.geometry import (
    Box,
    DimensionMismatch,
    NotPositiveSemidefinite,
    Polyline,
    cholesky,
    lift,
    point_in_polytope,
    quad_form,
    segment_hits_polytope,
    segment_hits_polytopes,
    symmetrize,
)

UNIT_SQUARE = np.array(
    [[1.0, 0.0, -1.0], [-1.0, 0.0, -1.0], [0.0, 1.0, -1.0], [0.0, -1.0, -1.0]]
)
"""`[-1, 1]^2`"""

coordinates = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
points = st.tuples(coordinates, coordinates)


def test_lift():
    assert lift([1.0, 2.0]).tolist() == [1.0, 2.0, 1.0]
    assert lift(np.zeros((4, 3))).shape == (4, 4)
    with pytest.raises(ValueError):
        lift([np.nan, 0.0])


def test_point_in_polytope_boundary_is_inside():
    assert point_in_polytope([0.0, 0.0], UNIT_SQUARE)
    assert point_in_polytope([1.0, 0.5], UNIT_SQUARE)
    assert point_in_polytope([1.0, 1.0], UNIT_SQUARE)
    assert not point_in_polytope([1.0 + 1e-9, 0.0], UNIT_SQUARE)


def test_segment_hits_polytope():
    assert segment_hits_polytope(
        (np.array([-3.0, 0.0]), np.array([3.0, 0.0])), UNIT_SQUARE
    )
    assert not segment_hits_polytope(
        (np.array([-3.0, 2.0]), np.array([3.0, 2.0])), UNIT_SQUARE
    )
    # touches the corner
    assert segment_hits_polytope(
        (np.array([0.0, 2.0]), np.array([2.0, 0.0])), UNIT_SQUARE
    )
    # zero length
    p = np.array([0.5, 0.5])
    assert segment_hits_polytope((p, p), UNIT_SQUARE)


def test_segment_hits_polytopes_parallel_outside():
    a, b = np.array([2.0, -5.0]), np.array([2.0, 5.0])
    faces = np.stack([UNIT_SQUARE, UNIT_SQUARE])
    faces[1, :, 2] = -3.0  # [-3, 3]^2
    assert segment_hits_polytopes(a, b, faces).tolist() == [False, True]


@settings(max_examples=200)
@given(points, points)
def test_segment_hits_polytope_dense_scan(a, b):
    a, b = np.array(a), np.array(b)
    ts = np.linspace(0, 1, 501)[:, None]
    pts = (1 - ts) * a + ts * b
    scanned = np.any(np.all(lift(pts) @ UNIT_SQUARE.T <= 0, axis=1))
    if scanned:
        assert segment_hits_polytope((a, b), UNIT_SQUARE)


def test_symmetrize():
    m = np.array([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(symmetrize(m), m)
    with pytest.raises(ValueError):
        symmetrize(np.array([[1.0, 2.0], [0.0, 3.0]]))
    with pytest.raises(DimensionMismatch):
        symmetrize(np.zeros((2, 3)))


def test_quad_form():
    assert quad_form(np.eye(3), [1.0, 2.0, 2.0]) == 9.0
    with pytest.raises(DimensionMismatch):
        quad_form(np.eye(3), [1.0, 2.0])


def test_cholesky_regular():
    m = np.array([[4.0, 2.0], [2.0, 3.0]])
    l, degenerate = cholesky(m)
    assert not degenerate
    np.testing.assert_allclose(l @ l.T, m)


def test_cholesky_singular():
    m = np.diag([0.0, 0.0, 0.01])
    l, degenerate = cholesky(m)
    assert degenerate
    np.testing.assert_allclose(l @ l.T, m, atol=1e-15)
    assert np.allclose(l, np.tril(l))


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveSemidefinite):
        cholesky(np.diag([1.0, -0.1, 1.0]))


def test_box():
    box = Box(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
    assert box.dim == 2
    assert box.diagonal == 5.0
    with pytest.raises(ValueError):
        Box(np.array([0.0, 0.0]), np.array([0.0, 1.0]))
    with pytest.raises(DimensionMismatch):
        Box(np.array([0.0, 0.0]), np.array([1.0, 1.0, 1.0]))


def test_polyline_single_waypoint():
    p = Polyline([1.0, 2.0])
    assert len(p) == 1
    assert p.length == 0
    ((a, b),) = list(p.segments())
    np.testing.assert_array_equal(a, b)


def test_polyline_validation():
    with pytest.raises(DimensionMismatch):
        Polyline([[0.0, 0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        Polyline([[0.0, np.inf]])


def test_polyline_is_immutable():
    w = np.array([[0.0, 0.0], [1.0, 0.0]])
    p = Polyline(w)
    w[0, 0] = 5.0
    assert p.waypoints[0, 0] == 0.0
    with pytest.raises(ValueError):
        p.waypoints[0, 0] = 1.0


def test_polyline_digest():
    a = Polyline([[0.0, 0.0], [1.0, 0.0]])
    b = Polyline([[0.0, 0.0], [1.0, 0.0]])
    c = Polyline([[0.0, 0.0], [1.0, 1e-12]])
    assert a.digest == b.digest
    assert a.digest != c.digest


def test_polyline_split_at():
    p = Polyline([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]])
    assert p.length == 4.0
    head, tail = p.split_at([2.0, 1.0])
    np.testing.assert_array_equal(
        head.waypoints, [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0]]
    )
    np.testing.assert_array_equal(tail.waypoints, [[2.0, 1.0], [2.0, 2.0]])
    head, tail = p.split_at([2.0, 0.0])
    assert head.length == 2.0 and tail.length == 2.0
    head, tail = p.split_at([2.0, 2.0])
    assert len(tail) == 1 and head.length == 4.0
    with pytest.raises(ValueError):
        p.split_at([1.0, 1.0])


def test_polyline_split_at_a_revisited_point():
    p = Polyline([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    assert p.locate([1.0, 0.0]) == (0, 0.5)
    assert p.locate([1.0, 0.0], start=1) == (1, 1.0)
    head, tail = p.split_at([1.0, 0.0], start=1)
    np.testing.assert_array_equal(
        head.waypoints, [[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]
    )
    np.testing.assert_array_equal(tail.waypoints, [[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        p.locate([0.5, 0.0], start=1)


@given(st.floats(0, 1))
def test_polyline_split_preserves_length(t):
    p = Polyline([[0.0, 0.0], [3.0, 4.0]])
    head, tail = p.split_at([3.0 * t, 4.0 * t])
    assert head.length + tail.length == pytest.approx(5.0)
