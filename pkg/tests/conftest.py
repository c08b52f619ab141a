"""Shared fixtures"""

from typing import Callable

import numpy as np
import pytest

from safeshadow.geometry import Polyline
from safeshadow.pgdf import GaussianFace, PgdfObstacle
from safeshadow.scene import Scene, load_scene

BoxFactory = Callable[..., PgdfObstacle]


def _box(
    obstacle_id: str,
    lo: tuple[float, float],
    hi: tuple[float, float],
    offset_var: float = 0.01,
    normal_var: float = 0.0,
) -> PgdfObstacle:
    """
    Axis-aligned planar box whose faces have independent Gaussian normals
    (variance `normal_var` per coordinate) and offsets (`offset_var`)
    """
    sigma = np.diag([normal_var, normal_var, offset_var])
    mus = [
        (1.0, 0.0, -hi[0]),
        (-1.0, 0.0, lo[0]),
        (0.0, 1.0, -hi[1]),
        (0.0, -1.0, lo[1]),
    ]
    return PgdfObstacle(
        id=obstacle_id,
        faces=tuple(GaussianFace(np.array(mu), sigma) for mu in mus),
    )


@pytest.fixture
def make_box() -> BoxFactory:
    """Factory of planar box obstacles, see `_box`"""
    return _box


@pytest.fixture
def gate() -> PgdfObstacle:
    """
    Single-face obstacle `{y >= c}` with `c ~ N(1, 0.5^2)`. The segment
    from `(-3, 0)` to `(3, 0)` collides with it with probability
    `Phi(-2)`.
    """
    return PgdfObstacle(
        id="gate",
        faces=(
            GaussianFace(
                np.array([0.0, -1.0, 1.0]), np.diag([0.0, 0.0, 0.25])
            ),
        ),
    )


@pytest.fixture
def horizontal() -> Polyline:
    return Polyline([[-3.0, 0.0], [3.0, 0.0]])


@pytest.fixture
def near_far() -> Scene:
    return load_scene("PRESET:near_far")


@pytest.fixture
def shortcut() -> Scene:
    return load_scene("PRESET:shortcut")
