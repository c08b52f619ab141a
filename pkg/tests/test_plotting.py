import numpy as np
import pytest

from safeshadow.certification import find_maximal_shadow_set
from safeshadow.geometry import DimensionMismatch, Polyline
from safeshadow.pgdf import GaussianFace, PgdfObstacle
from safeshadow.plotting import default_window, render_scene


def test_render_scene(tmp_path, near_far):
    assert near_far.trajectory is not None
    cert = find_maximal_shadow_set(
        near_far.obstacles, near_far.trajectory, 1e-3
    )
    kw = {
        "eps": [0.01, 0.1],
        "certificate": cert,
        "trajectory": near_far.trajectory,
        "window": near_far.window,
        "resolution": 80,
    }
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    render_scene(near_far.obstacles, a, **kw)
    render_scene(near_far.obstacles, b, **kw)
    content = a.read_bytes()
    assert b"<svg" in content
    assert content == b.read_bytes()


def test_render_tree_edges(tmp_path, make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    edges = [(np.array([-3.0, 0.0]), np.array([-2.0, 1.0]))]
    path = tmp_path / "tree.svg"
    render_scene([box], path, tree_edges=edges, resolution=40)
    assert path.stat().st_size > 0


def test_render_rejects_3d(tmp_path):
    cube = PgdfObstacle(
        id="cube", faces=(GaussianFace(np.zeros(4), np.eye(4)),)
    )
    with pytest.raises(DimensionMismatch):
        render_scene([cube], tmp_path / "cube.svg")


def test_default_window(make_box):
    box = make_box("box", (-1.0, -1.0), (1.0, 1.0))
    w = default_window([box], [Polyline([[-3.0, 0.0], [3.0, 0.0]])])
    np.testing.assert_allclose(w.lo, [-5.0, -3.0])
    np.testing.assert_allclose(w.hi, [5.0, 3.0])
    w = default_window([])
    np.testing.assert_array_equal(w.lo, [-10.0, -10.0])
