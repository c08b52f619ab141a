"""
Search for maximal shadows: for each obstacle, the smallest risk whose shadow
still misses a volume, found by bisection on the risk.
"""

import math
from typing import Iterable, Iterator, Literal, Sequence, TypeAlias

import numpy as np
from joblib import Parallel, delayed
from loguru import logger as logging

from ..geometry import Polyline, segment_hits_polytopes
from ..pgdf import PgdfObstacle
from ..shadow import make_obstacle_shadow, segment_terms, shadow_hits_volume
from .certificate import (
    ObstacleCert,
    ObstacleStatus,
    SafetyCertificate,
    assemble_certificate,
)

SearchSchedule: TypeAlias = Literal["linear", "log"]
"""
Where the next risk to test is taken. `linear` is the midpoint of the
bracket, `log` is its geometric mean (useful when the risks are tiny).
"""

DEFAULT_EPS_FLOOR = 1e-9
"""Smallest risk ever tested"""

DEFAULT_EPS_PRECISION = 1e-4
"""Default total precision `eps_p`"""


class BisectionLoop(Iterable):
    """
    Bisection of a bracket `[lo, hi]` on a monotone predicate. The predicate
    must be true at `lo` and is assumed true below any point where it is
    true.

    Example:

        ```python
        loop = BisectionLoop(lo=1e-9, hi=1.0, precision=1e-4)
        for eps in loop:
            loop.propose(predicate(eps))
        lo, hi = loop.bracket()
        ```
    """

    lo: float
    hi: float
    precision: float
    schedule: SearchSchedule

    _mid: float | None = None
    _iteration: int = 0

    def __init__(
        self,
        lo: float,
        hi: float,
        precision: float,
        schedule: SearchSchedule = "linear",
    ):
        """
        Args:
            lo (float): Must be positive if `schedule` is `log`
            hi (float):
            precision (float): The loop stops when `hi - lo <= precision`
            schedule (SearchSchedule, optional):
        """
        if not lo < hi:
            raise ValueError(f"Invalid bracket [{lo}, {hi}]")
        if not precision > 0:
            raise ValueError(f"Precision must be positive, got {precision}")
        if schedule == "log" and lo <= 0:
            raise ValueError("The log schedule needs a positive lower end")
        self.lo, self.hi, self.precision = lo, hi, precision
        self.schedule = schedule

    def __iter__(self) -> Iterator[float]:
        self._iteration = 0
        return self

    def __next__(self) -> float:
        if self._mid is not None:
            raise RuntimeError("No outcome proposed for the previous point")
        if self.hi - self.lo <= self.precision:
            raise StopIteration
        if self.schedule == "log":
            mid = math.sqrt(self.lo) * math.sqrt(self.hi)
        else:
            mid = self.lo + (self.hi - self.lo) / 2
        if not self.lo < mid < self.hi:  # bracket at float resolution
            raise StopIteration
        self._mid, self._iteration = mid, self._iteration + 1
        return mid

    @property
    def n_iterations(self) -> int:
        """Number of points yielded so far"""
        return self._iteration

    def bracket(self) -> tuple[float, float]:
        """Current bracket `(lo, hi)`"""
        return self.lo, self.hi

    def propose(self, outcome: bool) -> None:
        """Reports the predicate value at the last yielded point"""
        if self._mid is None:
            raise RuntimeError("No point to report an outcome for")
        if outcome:
            self.lo = self._mid
        else:
            self.hi = self._mid
        self._mid = None


def find_maximal_shadow(
    o: PgdfObstacle,
    vol: Polyline,
    eps_p: float,
    eps_floor: float = DEFAULT_EPS_FLOOR,
    schedule: SearchSchedule = "linear",
) -> ObstacleCert:
    """
    Smallest risk (up to `eps_p`) whose shadow misses `vol`. The shadow
    shrinks as the risk grows, so the set of risks whose shadow hits the
    volume is an interval starting at 0, and its upper end is bisected.

    - If the shadow at `eps_floor` already misses the volume, the result is
      `eps_floor` with status `DEGENERATE_FLOOR`.
    - If the volume hits the mean polytope, no shadow can miss it and the
      result is `1` with status `UNCERTIFIABLE`.
    - Otherwise the result `eps` is such that the shadow at `eps` misses the
      volume, and the shadow at `eps - eps_p` (if above the floor) hits it.
      If no risk below 1 works, the result is 1 (which is trivially true).

    Args:
        o (PgdfObstacle):
        vol (Polyline):
        eps_p (float): Precision, positive
        eps_floor (float, optional): Must be in `(0, 1)`
        schedule (SearchSchedule, optional):
    """
    if not eps_p > 0:
        raise ValueError(f"Precision must be positive, got {eps_p}")
    if not 0 < eps_floor < 1:
        raise ValueError(f"Risk floor must be in (0, 1), got {eps_floor}")
    if o.dim != vol.dim:
        raise ValueError(
            f"Obstacle '{o.id}' lives in R^{o.dim}, volume in R^{vol.dim}"
        )
    terms = segment_terms(o.faces, vol)
    n_calls = 0

    def _hits(eps: float) -> bool:
        nonlocal n_calls
        n_calls += 1
        return shadow_hits_volume(make_obstacle_shadow(o, eps), vol, terms)

    with logging.contextualize(obstacle=o.id):
        if not _hits(eps_floor):
            logging.debug("Shadow at the risk floor misses the volume")
            return ObstacleCert(
                obstacle_id=o.id,
                eps=eps_floor,
                face_q=tuple(make_obstacle_shadow(o, eps_floor).q),
                status="DEGENERATE_FLOOR",
                n_calls=n_calls,
            )
        n_calls += 1
        mean = o.mean_faces[np.newaxis]
        if any(
            segment_hits_polytopes(a, b, mean)[0] for a, b in vol.segments()
        ):
            logging.debug("Volume hits the mean polytope")
            return ObstacleCert(
                obstacle_id=o.id,
                eps=1.0,
                face_q=(0.0,) * len(o),
                status="UNCERTIFIABLE",
                n_calls=n_calls,
            )
        loop = BisectionLoop(eps_floor, 1.0, eps_p, schedule)
        for eps in loop:
            loop.propose(_hits(eps))
        _, eps = loop.bracket()
        logging.debug(
            "Found risk {} after {} intersection tests", eps, n_calls
        )
        return ObstacleCert(
            obstacle_id=o.id,
            eps=eps,
            face_q=(
                tuple(make_obstacle_shadow(o, eps).q)
                if eps < 1
                else (0.0,) * len(o)
            ),
            status="CERTIFIED",
            n_calls=n_calls,
        )


def _search_all(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    eps_p: float,
    eps_floor: float,
    schedule: SearchSchedule,
    n_jobs: int,
) -> list[ObstacleCert]:
    """
    Runs `find_maximal_shadow` on every obstacle with precision `eps_p / n`.
    Results do not depend on `n_jobs`.
    """
    ids = [o.id for o in obstacles]
    if len(set(ids)) != len(ids):
        raise ValueError("Obstacle ids must be unique")
    if not obstacles:
        return []
    eps_i = eps_p / len(obstacles)
    jobs = [
        delayed(find_maximal_shadow)(o, vol, eps_i, eps_floor, schedule)
        for o in obstacles
    ]
    if len(jobs) <= 1 or n_jobs == 1:
        return [j[0](*j[1], **j[2]) for j in jobs]
    executor = Parallel(n_jobs=n_jobs)
    return list(executor(jobs))


def find_maximal_shadow_set(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    eps_p: float,
    eps_floor: float = DEFAULT_EPS_FLOOR,
    schedule: SearchSchedule = "linear",
    n_jobs: int = 1,
) -> SafetyCertificate:
    """
    Optimal risk allocation: every obstacle gets its own maximal shadow, with
    precision `eps_p / n` where `n` is the number of obstacles, so that the
    total is within `eps_p` of the smallest total this method can certify.
    The total is the sum of the per-obstacle risks, rounded up.

    Args:
        obstacles (Sequence[PgdfObstacle]): Must have unique ids
        vol (Polyline):
        eps_p (float): Total precision
        eps_floor (float, optional):
        schedule (SearchSchedule, optional):
        n_jobs (int, optional): Number of joblib workers. The output is
            independent of it.
    """
    certs = _search_all(obstacles, vol, eps_p, eps_floor, schedule, n_jobs)
    cert = assemble_certificate(certs, vol, eps_p, eps_floor, "optimal")
    logging.info(
        "Certified {} obstacle(s), total risk {:.6g}, {} intersection tests",
        len(certs),
        cert.total_eps,
        cert.n_calls,
    )
    return cert


def find_uniform_shadow_set(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    eps_p: float,
    eps_floor: float = DEFAULT_EPS_FLOOR,
    schedule: SearchSchedule = "linear",
    n_jobs: int = 1,
) -> SafetyCertificate:
    """
    Uniform risk allocation baseline: every obstacle gets the same risk, the
    largest of the maximal shadow risks (the smallest common risk at which
    all shadows miss the volume). The total is `n` times that risk.
    """
    certs = _search_all(obstacles, vol, eps_p, eps_floor, schedule, n_jobs)
    eps_u = max((c.eps for c in certs), default=eps_floor)
    uniform: list[ObstacleCert] = []
    for o, c in zip(obstacles, certs):
        if eps_u >= 1:
            face_q: tuple[float, ...] = (0.0,) * len(o)
        else:
            face_q = tuple(make_obstacle_shadow(o, eps_u).q)
        status: ObstacleStatus = c.status
        if c.status == "DEGENERATE_FLOOR" and eps_u > eps_floor:
            status = "CERTIFIED"
        uniform.append(
            ObstacleCert(
                obstacle_id=o.id,
                eps=eps_u,
                face_q=face_q,
                status=status,
                n_calls=c.n_calls,
            )
        )
    cert = assemble_certificate(uniform, vol, eps_p, eps_floor, "uniform")
    logging.info(
        "Uniform allocation: risk {:.6g} per obstacle, total {:.6g}",
        eps_u,
        cert.total_eps,
    )
    return cert
