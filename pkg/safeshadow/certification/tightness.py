"""
Monte-Carlo estimate of how loose the union bound of a certificate is.

A certificate bounds the collision probability by `sum_i eps_i`, where
`eps_i` bounds the probability that obstacle `i` escapes its shadow. The gap
between that sum and the probability that *some* obstacle escapes is the
price of the union bound, and depends on how the obstacles are coupled.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from loguru import logger as logging

from ..geometry import Polyline
from ..numerics import RngStream
from ..oracle import sample_world
from ..pgdf import Coupling, PgdfObstacle, halfspaces_in_cone
from .certificate import DigestMismatch, SafetyCertificate

DEFAULT_BATCH_SIZE = 10_000


@dataclass(frozen=True)
class UnionGapReport:
    """Result of `union_bound_gap_estimate`"""

    trials: int
    coupling: Coupling

    escape_freq: dict[str, float]
    """Per obstacle: frequency of draws outside the recorded shadow"""

    union_freq: float
    """Frequency of draws where some obstacle escapes its shadow"""

    union_bound: float
    """Certified total risk, `sum_i eps_i`"""

    gap: float
    """`sum_i escape_freq[i] - union_freq`, always non-negative"""

    gap_stderr: float

    certified_slack: float
    """`union_bound - union_freq`"""

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "trials": self.trials,
            "coupling": self.coupling,
            "escape_freq": dict(self.escape_freq),
            "union_freq": self.union_freq,
            "union_bound": self.union_bound,
            "gap": self.gap,
            "gap_stderr": self.gap_stderr,
            "certified_slack": self.certified_slack,
        }


def _escapes(
    o: PgdfObstacle, faces: np.ndarray, qs: Sequence[float]
) -> np.ndarray:
    """
    Whether each realization in the `(N, m, d + 1)` array `faces` has a face
    whose halfspace is not swept by its recorded ellipsoid.
    """
    inside = np.stack(
        [
            halfspaces_in_cone(faces[:, i], f, q)
            for i, (f, q) in enumerate(zip(o.faces, qs))
        ],
        axis=1,
    )
    return ~inside.all(axis=1)


def union_bound_gap_estimate(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    cert: SafetyCertificate,
    trials: int,
    rng: RngStream,
    coupling: Coupling = "independent",
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> UnionGapReport:
    """
    Estimates the per-obstacle escape probabilities and the probability that
    at least one obstacle escapes, under a given coupling of the obstacles.
    With the `comonotone` coupling, all faces of all obstacles share one
    standard normal draw. Obstacles certified with risk 1 have no shadow and
    always count as escaping.

    Args:
        obstacles (Sequence[PgdfObstacle]): All of the same dimension
        vol (Polyline): The volume the certificate was issued for
        cert (SafetyCertificate):
        trials (int):
        rng (RngStream):
        coupling (Coupling, optional):
        batch_size (int, optional):

    Raises:
        DigestMismatch: If the certificate was not issued for `vol`.
    """
    if cert.volume_digest != vol.digest:
        raise DigestMismatch("Certificate was not issued for this volume")
    if trials < 1:
        raise ValueError(f"Number of trials must be positive, got {trials}")
    by_id = {c.obstacle_id: c for c in cert.per_obstacle}
    if sorted(by_id) != sorted(o.id for o in obstacles):
        raise ValueError("Certificate does not cover the given obstacles")
    if len({o.dim for o in obstacles}) > 1:
        raise ValueError("All obstacles must have the same dimension")
    escapes = {o.id: 0 for o in obstacles}
    union, excess, excess_sq = 0, 0.0, 0.0
    done = 0
    while done < trials:
        size = min(batch_size, trials - done)
        worlds = sample_world(obstacles, rng, size, coupling)
        esc = np.ones((size, len(obstacles)), dtype=bool)
        for j, (o, faces) in enumerate(zip(obstacles, worlds)):
            c = by_id[o.id]
            if c.eps < 1:
                esc[:, j] = _escapes(o, faces, c.face_q)
        for j, o in enumerate(obstacles):
            escapes[o.id] += int(esc[:, j].sum())
        per_trial = esc.sum(axis=1) - esc.any(axis=1)
        union += int(esc.any(axis=1).sum())
        excess += float(per_trial.sum())
        excess_sq += float(np.square(per_trial).sum())
        done += size
    mean_excess = excess / trials
    var = max(excess_sq / trials - mean_excess**2, 0.0)
    report = UnionGapReport(
        trials=trials,
        coupling=coupling,
        escape_freq={k: v / trials for k, v in sorted(escapes.items())},
        union_freq=union / trials,
        union_bound=cert.total_eps,
        gap=mean_excess,
        gap_stderr=float(np.sqrt(var / trials)),
        certified_slack=cert.total_eps - union / trials,
    )
    logging.info(
        "Union bound {:.6g}, union frequency {:.6g}, gap {:.3g} +- {:.2g}",
        report.union_bound,
        report.union_freq,
        report.gap,
        report.gap_stderr,
    )
    return report
