import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from safeshadow.geometry import Box, DimensionMismatch, Polyline
from safeshadow.numerics import chi2_isf, chi2_sf
from safeshadow.pgdf import (
    GaussianFace,
    PgdfObstacle,
    halfspace_in_cone,
    halfspaces_in_cone,
)
from safeshadow.shadow import (
    critical_eps_point,
    face_shadow_h,
    face_shadow_membership,
    make_face_shadow,
    make_obstacle_shadow,
    obstacle_shadow_membership,
    segment_face_gap,
    shadow_boundary_2d,
    shadow_hits_volume,
)

coordinates = st.floats(-4, 4, allow_nan=False, allow_infinity=False)
points = st.tuples(coordinates, coordinates)
risks = st.floats(1e-6, 0.9)


def _wall(sigma: np.ndarray) -> GaussianFace:
    """`{y >= 1}` in the mean"""
    return GaussianFace(np.array([0.0, -1.0, 1.0]), sigma)


def test_deterministic_face_is_its_halfspace():
    fs = make_face_shadow(_wall(np.zeros((3, 3))), 0.1)
    assert not fs.degenerate
    assert face_shadow_membership(fs, [0.0, 1.0])
    assert face_shadow_membership(fs, [5.0, 3.0])
    assert not face_shadow_membership(fs, [0.0, 0.999])
    np.testing.assert_allclose(
        face_shadow_h(fs, [[0.0, 2.0], [0.0, 0.0]]), [1.0, -1.0]
    )


def test_obstacle_shadow_splits_the_risk(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    os = make_obstacle_shadow(box, 0.2)
    assert os.eps == 0.2
    assert [fs.eps for fs in os.face_shadows] == [0.05] * 4
    assert os.q == [chi2_isf(0.05, 3)] * 4


def test_obstacle_shadow_validation(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        make_obstacle_shadow(box, 0.0)
    with pytest.raises(ValueError):
        make_obstacle_shadow(box, 1.0)
    with pytest.raises(DimensionMismatch):
        make_obstacle_shadow(box, 0.1, face_q=[1.0, 2.0])


def test_explicit_radii(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    os = make_obstacle_shadow(box, 0.1, face_q=[1.0, 2.0, 3.0, 4.0])
    assert os.q == [1.0, 2.0, 3.0, 4.0]


@settings(max_examples=200)
@given(risks, risks, points)
def test_shadows_are_nested(eps1, eps2, x):
    box = PgdfObstacle(
        id="box",
        faces=tuple(
            GaussianFace(np.array(mu), 0.01 * np.eye(3))
            for mu in [
                (1.0, 0.0, -1.0),
                (-1.0, 0.0, -1.0),
                (0.0, 1.0, -1.0),
                (0.0, -1.0, -1.0),
            ]
        ),
    )
    lo, hi = sorted([eps1, eps2])
    if obstacle_shadow_membership(make_obstacle_shadow(box, hi), x):
        assert obstacle_shadow_membership(make_obstacle_shadow(box, lo), x)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6),
    points,
    st.floats(0.01, 0.5),
)
def test_membership_matches_the_cone(mu, tril, x, eps):
    chol = np.zeros((3, 3))
    chol[np.tril_indices(3)] = tril
    sigma = chol @ chol.T + 0.01 * np.eye(3)
    face = GaussianFace(np.array(mu), sigma)
    fs = make_face_shadow(face, eps)
    assume(not fs.degenerate)
    (h,) = face_shadow_h(fs, x)
    assume(abs(h) > 1e-6)
    xt = np.append(x, 1.0)
    q = fs.q * (1 + 1e-6)
    if h > 0:
        # minimizer of n^T x~ over the ellipsoid
        n = face.mu - np.sqrt(fs.q / (xt @ sigma @ xt)) * (sigma @ xt)
        assert halfspace_in_cone(n, face, q)
        assert n @ xt <= 0
    else:
        rng = np.random.default_rng(0)
        u = rng.normal(size=(200, 3))
        u *= rng.uniform(size=(200, 1)) / np.linalg.norm(u, axis=1)[:, None]
        ns = face.mu + np.sqrt(fs.q) * u @ np.linalg.cholesky(sigma).T
        assert halfspaces_in_cone(ns, face, q).all()
        assert np.all(ns @ xt > 0)


def test_segment_face_gap_endpoints():
    fs = make_face_shadow(_wall(0.01 * np.eye(3)), 0.1)
    a, b = np.array([-6.0, 0.0]), np.array([6.0, 0.0])
    gap = segment_face_gap(fs, (a, b))
    assert gap is not None
    # on y = 0, h < 0 iff x^2 + 1 < 100 / q
    x_star = np.sqrt(100 / chi2_isf(0.1, 3) - 1)
    assert gap.lo == pytest.approx((6 - x_star) / 12, abs=1e-9)
    assert gap.hi == pytest.approx((6 + x_star) / 12, abs=1e-9)
    ends = np.stack([(1 - t) * a + t * b for t in gap])
    assert np.all(np.abs(face_shadow_h(fs, ends)) <= 1e-9)


def test_segment_face_gap_whole_segment():
    fs = make_face_shadow(_wall(np.zeros((3, 3))), 0.1)
    gap = segment_face_gap(fs, (np.array([-1.0, 0.0]), np.array([1.0, 0.0])))
    assert gap == (0.0, 1.0)
    gap = segment_face_gap(fs, (np.array([-1.0, 2.0]), np.array([1.0, 2.0])))
    assert gap is None


def test_segment_face_gap_crossing():
    fs = make_face_shadow(_wall(np.zeros((3, 3))), 0.1)
    gap = segment_face_gap(fs, (np.array([0.0, 0.0]), np.array([0.0, 4.0])))
    assert gap is not None
    assert gap.lo == 0.0
    assert gap.hi == pytest.approx(0.25, abs=1e-12)


def test_degenerate_face_shadow_is_everything():
    face = GaussianFace(np.array([0.0, -1.0, 0.1]), np.eye(3))
    fs = make_face_shadow(face, 0.5)
    assert fs.degenerate
    assert face_shadow_membership(fs, [0.0, -100.0])
    assert np.all(np.isinf(face_shadow_h(fs, np.zeros((3, 2)))))
    s = (np.array([-1.0, -5.0]), np.array([1.0, -5.0]))
    assert segment_face_gap(fs, s) is None


def test_shadow_hits_volume(make_box, horizontal):
    box = make_box("box", (-1.0, 2.0), (1.0, 3.0), normal_var=0.01)
    assert not shadow_hits_volume(make_obstacle_shadow(box, 0.5), horizontal)
    # small risk, wide shadow
    assert shadow_hits_volume(make_obstacle_shadow(box, 1e-12), horizontal)
    through = Polyline([[-3.0, 2.5], [3.0, 2.5]])
    assert shadow_hits_volume(make_obstacle_shadow(box, 0.5), through)


def test_shadow_hits_single_point(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    os = make_obstacle_shadow(box, 0.1)
    assert shadow_hits_volume(os, Polyline([0.0, 0.0]))
    assert not shadow_hits_volume(os, Polyline([5.0, 5.0]))


@settings(max_examples=100, deadline=None)
@given(points, points, st.floats(1e-4, 0.5))
def test_shadow_hits_volume_dense_scan(a, b, eps):
    box = PgdfObstacle(
        id="box",
        faces=tuple(
            GaussianFace(np.array(mu), np.diag([0.001, 0.001, 0.01]))
            for mu in [
                (1.0, 0.0, -1.0),
                (-1.0, 0.0, -1.0),
                (0.0, 1.0, -1.0),
                (0.0, -1.0, -1.0),
            ]
        ),
    )
    os = make_obstacle_shadow(box, eps)
    ts = np.linspace(0, 1, 401)[:, None]
    pts = (1 - ts) * np.array(a) + ts * np.array(b)
    margins = np.stack([face_shadow_h(fs, pts) for fs in os.face_shadows])
    if np.any(np.all(margins >= 0, axis=0)):
        assert shadow_hits_volume(os, Polyline([a, b]))


def test_critical_eps_point():
    o = PgdfObstacle(
        id="wall",
        faces=(
            GaussianFace(
                np.array([-1.0, 0.0, 1.0]), np.diag([0.0, 0.0, 0.04])
            ),
        ),
    )
    x = np.array([0.5, 0.0])
    eps = critical_eps_point(o, x)
    assert eps == pytest.approx(chi2_sf(6.25, 3))
    assert eps == pytest.approx(0.1, abs=1e-3)
    assert obstacle_shadow_membership(make_obstacle_shadow(o, 0.9 * eps), x)
    assert not obstacle_shadow_membership(
        make_obstacle_shadow(o, 1.1 * eps), x
    )


def test_critical_eps_point_extremes(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    assert critical_eps_point(box, [0.0, 0.0]) == 1.0
    rigid = make_box("rigid", (-1.0, -1.0), (1.0, 1.0), offset_var=0.0)
    assert critical_eps_point(rigid, [2.0, 0.0]) == 0.0


def test_shadow_boundary_of_rigid_box(make_box):
    rigid = make_box("rigid", (-1.0, -1.0), (1.0, 1.0), offset_var=0.0)
    window = Box(np.array([-3.0, -3.0]), np.array([3.0, 3.0]))
    lines = shadow_boundary_2d(make_obstacle_shadow(rigid, 0.1), window, 121)
    assert lines
    pts = np.vstack([line.waypoints for line in lines])
    dist = np.abs(np.abs(pts).max(axis=1) - 1.0)
    assert np.all(dist <= 0.1)


def test_shadow_boundary_validation(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    os = make_obstacle_shadow(box, 0.1)
    window = Box(np.array([-3.0, -3.0]), np.array([3.0, 3.0]))
    with pytest.raises(ValueError):
        shadow_boundary_2d(os, window, 1)
    cube = PgdfObstacle(
        id="cube", faces=(GaussianFace(np.zeros(4), np.eye(4)),)
    )
    with pytest.raises(DimensionMismatch):
        shadow_boundary_2d(make_obstacle_shadow(cube, 0.1), window)
