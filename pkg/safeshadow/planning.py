"""
Risk-constrained RRT. The tree only grows along extensions whose
root-to-node trajectory certifies below a risk bound, so every path it
returns is certified.

The risk of a root-to-node path is maintained incrementally: each node
caches, per obstacle, the maximal shadow search result of its root-to-node
path. For a new node, the per-obstacle result is the larger of the parent's
cached result and the result on the new segment, since a shadow at the
larger risk is nested in the shadow at the smaller one and therefore misses
both parts.

This planner is not probabilistically complete: failing to find a path is
not evidence that none exists.
"""

from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from loguru import logger as logging
from numpy.typing import ArrayLike

from .certification import (
    DEFAULT_EPS_FLOOR,
    DEFAULT_EPS_PRECISION,
    ObstacleCert,
    SafetyCertificate,
    assemble_certificate,
    find_maximal_shadow,
    find_maximal_shadow_set,
    round_up_sum,
)
from .geometry import Box, Polyline
from .numerics import RngStream
from .pgdf import PgdfObstacle
from .utils import to_array

DEFAULT_GOAL_BIAS = 0.05
"""Probability that `random_state` returns the goal"""

DEFAULT_STEP_FRACTION = 0.05
"""Default step size, as a fraction of the workspace diagonal"""

DEFAULT_MAX_ITERATIONS = 2000


class StartNotCertifiable(ValueError):
    """
    Raised by `plan` when the start point alone has a certified risk above
    the planner's bound.
    """


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    """Parameters of `plan`"""

    start: np.ndarray
    goal: np.ndarray
    workspace: Box
    """Sampling region"""

    eps_safe: float
    """Risk bound of returned paths, in `(0, 1)`"""

    eps_p: float = DEFAULT_EPS_PRECISION
    """Total precision of the shadow searches"""

    eps_floor: float = DEFAULT_EPS_FLOOR

    step_size: float | None = None
    """
    Maximal extension length. Defaults to `DEFAULT_STEP_FRACTION` times the
    workspace diagonal.
    """

    goal_bias: float = DEFAULT_GOAL_BIAS

    max_iterations: int = DEFAULT_MAX_ITERATIONS

    goal_radius: float | None = None
    """
    Nodes this close to the goal try to connect to it directly. Defaults to
    the step size.
    """

    def __post_init__(self) -> None:
        start = to_array(self.start, dtype=float)
        goal = to_array(self.goal, dtype=float)
        if start.shape != (self.workspace.dim,) or goal.shape != start.shape:
            raise ValueError(
                "Start, goal and workspace must have the same dimension"
            )
        if not 0 < self.eps_safe < 1:
            raise ValueError(
                f"Risk bound must be in (0, 1), got {self.eps_safe}"
            )
        if not 0 <= self.goal_bias <= 1:
            raise ValueError(
                f"Goal bias must be in [0, 1], got {self.goal_bias}"
            )
        if self.max_iterations < 0:
            raise ValueError("Number of iterations must be non-negative")
        step = (
            DEFAULT_STEP_FRACTION * self.workspace.diagonal
            if self.step_size is None
            else float(self.step_size)
        )
        if not step > 0:
            raise ValueError(f"Step size must be positive, got {step}")
        radius = step if self.goal_radius is None else self.goal_radius
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "step_size", step)
        object.__setattr__(self, "goal_radius", float(radius))

    @property
    def eta(self) -> float:
        """Resolved step size"""
        return float(self.step_size)  # type: ignore

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "workspace": self.workspace.to_dict(),
            "eps_safe": self.eps_safe,
            "eps_precision": self.eps_p,
            "eps_floor": self.eps_floor,
            "step_size": self.step_size,
            "goal_bias": self.goal_bias,
            "max_iterations": self.max_iterations,
            "goal_radius": self.goal_radius,
        }


@dataclass(frozen=True)
class ExtensionRejected:
    """Outcome of a rejected `try_extend`"""

    risk: float
    """Certified risk of the rejected root-to-node path"""


@dataclass(frozen=True)
class PlanResult:
    """Outcome of `plan`"""

    path: Polyline | None
    """Root-to-goal waypoints, `None` if no path was found"""

    tree: nx.DiGraph = field(repr=False)
    """
    Search tree. Nodes are insertion indices (the root is 0) with attributes
    `config` (a point) and `certs` (per-obstacle search results of the
    root-to-node path, in obstacle order).
    """

    certificate: SafetyCertificate | None
    """Certificate of `path` assembled from the tree's cached results"""

    recertification: SafetyCertificate | None
    """From-scratch certification of `path`"""

    iterations: int

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        nodes = sorted(self.tree.nodes)
        return {
            "path": None if self.path is None else self.path.to_dict(),
            "iterations": self.iterations,
            "tree": {
                "nodes": [
                    self.tree.nodes[i]["config"].tolist() for i in nodes
                ],
                "edges": [list(e) for e in sorted(self.tree.edges)],
            },
            "certificate": (
                None
                if self.certificate is None
                else self.certificate.to_dict()
            ),
            "recertification": (
                None
                if self.recertification is None
                else self.recertification.to_dict()
            ),
        }


def random_state(cfg: PlannerConfig, rng: RngStream) -> np.ndarray:
    """
    Uniform sample of the workspace, except with probability
    `cfg.goal_bias` where the goal is returned.
    """
    if rng.generator.uniform() < cfg.goal_bias:
        return cfg.goal.copy()
    return rng.generator.uniform(cfg.workspace.lo, cfg.workspace.hi)


def nearest_neighbor(tree: nx.DiGraph, x: ArrayLike) -> int:
    """
    Node whose configuration is closest to `x` (Euclidean distance). Ties go
    to the lowest insertion index.
    """
    if tree.number_of_nodes() == 0:
        raise ValueError("Tree is empty")
    configs = np.stack(
        [tree.nodes[i]["config"] for i in range(tree.number_of_nodes())]
    )
    d = np.linalg.norm(configs - to_array(x, dtype=float), axis=1)
    return int(np.argmin(d))


def extend(x_near: ArrayLike, x_rand: ArrayLike, eta: float) -> np.ndarray:
    """
    `x_rand` if it is within `eta` of `x_near`, otherwise the point at
    distance `eta` from `x_near` towards `x_rand`.
    """
    x_near = to_array(x_near, dtype=float)
    x_rand = to_array(x_rand, dtype=float)
    v = x_rand - x_near
    n = float(np.linalg.norm(v))
    if n <= eta:
        return x_rand.copy()
    return x_near + (eta / n) * v


def _add_node(
    tree: nx.DiGraph,
    config: np.ndarray,
    certs: Sequence[ObstacleCert],
    parent: int | None,
) -> int:
    i = tree.number_of_nodes()
    tree.add_node(i, config=config, certs=tuple(certs))
    if parent is not None:
        tree.add_edge(parent, i)
    return i


def try_extend(
    tree: nx.DiGraph,
    near: int,
    x_new: ArrayLike,
    obstacles: Sequence[PgdfObstacle],
    cfg: PlannerConfig,
) -> int | ExtensionRejected:
    """
    Adds `x_new` as a child of `near` iff the root-to-`x_new` path
    certifies at or below `cfg.eps_safe`. The per-obstacle results of the new
    segment are composed with the cached results of `near` by taking the
    larger risk.

    Returns:
        The new node, or the offending risk.
    """
    x_new = to_array(x_new, dtype=float)
    segment = Polyline(np.stack([tree.nodes[near]["config"], x_new]))
    eps_i = cfg.eps_p / max(len(obstacles), 1)
    certs = []
    for o, cached in zip(obstacles, tree.nodes[near]["certs"]):
        c = find_maximal_shadow(o, segment, eps_i, eps_floor=cfg.eps_floor)
        certs.append(c if c.eps > cached.eps else cached)
    risk = round_up_sum([c.eps for c in certs])
    if risk > cfg.eps_safe:
        return ExtensionRejected(risk=risk)
    return _add_node(tree, x_new, certs, near)


def _path_to(tree: nx.DiGraph, node: int) -> Polyline:
    nodes = nx.shortest_path(tree, 0, node)
    return Polyline(np.stack([tree.nodes[i]["config"] for i in nodes]))


def plan(
    obstacles: Sequence[PgdfObstacle], cfg: PlannerConfig, rng: RngStream
) -> PlanResult:
    """
    Grows a tree from `cfg.start` with `random_state`, `nearest_neighbor`,
    `extend` and `try_extend`. Every node within `cfg.goal_radius` of the
    goal tries to connect to the goal itself, and the search ends at the
    first success.

    Returns:
        The path from the start to the goal, or no path after
        `cfg.max_iterations` iterations.

    Raises:
        StartNotCertifiable: If the start point alone has a risk above
            `cfg.eps_safe`.
    """
    ids = [o.id for o in obstacles]
    if len(set(ids)) != len(ids):
        raise ValueError("Obstacle ids must be unique")
    tree = nx.DiGraph()
    start = Polyline(cfg.start)
    eps_i = cfg.eps_p / max(len(obstacles), 1)
    root_certs = [
        find_maximal_shadow(o, start, eps_i, eps_floor=cfg.eps_floor)
        for o in obstacles
    ]
    risk = round_up_sum([c.eps for c in root_certs])
    if risk > cfg.eps_safe:
        raise StartNotCertifiable(
            f"Start point has risk {risk} > {cfg.eps_safe}"
        )
    root = _add_node(tree, cfg.start, root_certs, None)

    def _finish(node: int, iterations: int) -> PlanResult:
        path = _path_to(tree, node)
        cert = assemble_certificate(
            tree.nodes[node]["certs"], path, cfg.eps_p, cfg.eps_floor
        )
        recert = find_maximal_shadow_set(
            obstacles, path, cfg.eps_p, eps_floor=cfg.eps_floor
        )
        logging.info(
            "Found a path with {} waypoints after {} iterations, risk {:.6g} "
            "(recertified {:.6g})",
            len(path),
            iterations,
            cert.total_eps,
            recert.total_eps,
        )
        return PlanResult(
            path=path,
            tree=tree,
            certificate=cert,
            recertification=recert,
            iterations=iterations,
        )

    def _reach_goal(node: int) -> int | None:
        x = tree.nodes[node]["config"]
        if np.array_equal(x, cfg.goal):
            return node
        if np.linalg.norm(x - cfg.goal) > cfg.goal_radius:  # type: ignore
            return None
        r = try_extend(tree, node, cfg.goal, obstacles, cfg)
        return None if isinstance(r, ExtensionRejected) else r

    if (goal := _reach_goal(root)) is not None:
        return _finish(goal, 0)
    for it in range(1, cfg.max_iterations + 1):
        x_rand = random_state(cfg, rng)
        near = nearest_neighbor(tree, x_rand)
        x_new = extend(tree.nodes[near]["config"], x_rand, cfg.eta)
        if np.array_equal(x_new, tree.nodes[near]["config"]):
            continue
        r = try_extend(tree, near, x_new, obstacles, cfg)
        if isinstance(r, ExtensionRejected):
            logging.debug("Iteration {}: rejected risk {:.4g}", it, r.risk)
            continue
        if (goal := _reach_goal(r)) is not None:
            return _finish(goal, it)
    logging.warning(
        "No path found after {} iterations ({} nodes)",
        cfg.max_iterations,
        tree.number_of_nodes(),
    )
    return PlanResult(
        path=None,
        tree=tree,
        certificate=None,
        recertification=None,
        iterations=cfg.max_iterations,
    )
