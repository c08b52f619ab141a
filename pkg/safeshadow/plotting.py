"""Rendering of planar scenes to SVG"""

from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from loguru import logger as logging
from matplotlib.axes import Axes
from matplotlib.figure import Figure

from .certification import SafetyCertificate
from .geometry import Box, DimensionMismatch, Polyline, lift
from .pgdf import PgdfObstacle
from .shadow import (
    ObstacleShadow,
    make_obstacle_shadow,
    shadow_boundary_2d,
)

SHADOW_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"]
"""Outline colors of successive shadow families"""

_SVG_SALT = "safeshadow"


def default_window(
    obstacles: Sequence[PgdfObstacle],
    polylines: Sequence[Polyline] = (),
    margin: float = 2.0,
) -> Box:
    """
    Bounding box of the polylines and of the vertices of the bounded mean
    polygons, enlarged by `margin`.
    """
    pts = [p.waypoints for p in polylines]
    for o in obstacles:
        faces = o.mean_faces
        for i in range(len(faces)):
            for j in range(i + 1, len(faces)):
                a = faces[[i, j], :2]
                if abs(np.linalg.det(a)) < 1e-12:
                    continue
                v = np.linalg.solve(a, -faces[[i, j], 2])
                if np.all(faces @ lift(v) <= 1e-9):
                    pts.append(v[np.newaxis])
    if not pts:
        return Box(np.full(2, -10.0), np.full(2, 10.0))
    p = np.vstack(pts)
    return Box(p.min(axis=0) - margin, p.max(axis=0) + margin)


def _plot_mean_polygon(
    ax: Axes, o: PgdfObstacle, window: Box, resolution: int
) -> None:
    xs = np.linspace(window.lo[0], window.hi[0], resolution)
    ys = np.linspace(window.lo[1], window.hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = lift(np.stack([gx.ravel(), gy.ravel()], axis=-1))
    field = (pts @ o.mean_faces.T).max(axis=1).reshape(gx.shape)
    if field.min() >= 0:
        return
    ax.contourf(
        xs, ys, field, levels=[field.min() - 1.0, 0.0], colors=["#404040"]
    )


def _plot_shadow(
    ax: Axes,
    shadow: ObstacleShadow,
    window: Box,
    resolution: int,
    color: str,
    label: str | None,
) -> None:
    for k, line in enumerate(shadow_boundary_2d(shadow, window, resolution)):
        w = line.waypoints
        ax.plot(
            w[:, 0],
            w[:, 1],
            color=color,
            linewidth=1,
            label=label if k == 0 else None,
        )


def render_scene(
    obstacles: Sequence[PgdfObstacle],
    output: str | Path,
    eps: Sequence[float] = (),
    certificate: SafetyCertificate | None = None,
    trajectory: Polyline | None = None,
    tree_edges: Sequence[tuple[np.ndarray, np.ndarray]] = (),
    window: Box | None = None,
    resolution: int = 200,
) -> None:
    """
    Draws mean polygons (filled), shadow outlines, a trajectory and planner
    tree edges, and saves the figure as SVG. The output is byte-identical
    for identical inputs.

    Args:
        obstacles (Sequence[PgdfObstacle]): Must be planar
        output (str | Path):
        eps (Sequence[float], optional): For each value, the shadows of all
            obstacles at that risk are outlined in a different color
        certificate (SafetyCertificate | None, optional): If given, the
            certified shadows are outlined (obstacles certified with risk 1
            have no shadow)
        trajectory (Polyline | None, optional):
        tree_edges (Sequence[tuple[np.ndarray, np.ndarray]], optional):
        window (Box | None, optional): Defaults to `default_window`
        resolution (int, optional): Grid resolution of the outlines

    Raises:
        DimensionMismatch: If the scene is not planar.
    """
    if any(o.dim != 2 for o in obstacles) or (
        trajectory is not None and trajectory.dim != 2
    ):
        raise DimensionMismatch("Only planar scenes can be rendered")
    if window is None:
        window = default_window(
            obstacles, [] if trajectory is None else [trajectory]
        )
    fig = Figure(figsize=(6, 6))
    ax = fig.subplots()
    for o in obstacles:
        _plot_mean_polygon(ax, o, window, resolution)
    for k, e in enumerate(eps):
        color = SHADOW_COLORS[k % len(SHADOW_COLORS)]
        for j, o in enumerate(obstacles):
            shadow = make_obstacle_shadow(o, e)
            label = f"eps = {e:g}" if j == 0 else None
            _plot_shadow(ax, shadow, window, resolution, color, label)
    if certificate is not None:
        by_id = {o.id: o for o in obstacles}
        for c in certificate.per_obstacle:
            if c.eps >= 1:
                continue
            o = by_id[c.obstacle_id]
            shadow = make_obstacle_shadow(o, c.eps, c.face_q)
            _plot_shadow(ax, shadow, window, resolution, "#2ca02c", None)
    for a, b in tree_edges:
        ax.plot([a[0], b[0]], [a[1], b[1]], color="#b0b0b0", linewidth=0.5)
    if trajectory is not None:
        w = trajectory.waypoints
        ax.plot(w[:, 0], w[:, 1], color="black", linewidth=1.5, marker=".")
    ax.set_xlim(window.lo[0], window.hi[0])
    ax.set_ylim(window.lo[1], window.hi[1])
    ax.set_aspect("equal")
    if eps:
        ax.legend(loc="upper right")
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(output, format="svg", metadata={"Date": None})
    logging.debug("Rendered scene to {}", output)
