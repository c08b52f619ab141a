"""
Monte-Carlo ground truth: collision probability of a volume, and frequency
at which sampled obstacles are contained in their shadow. Both estimators
count successes over independent draws and report a Clopper-Pearson upper
bound.

Trials are split into chunks of fixed size, each drawn from its own stream
spawned from the caller's stream, so the result for a given seed does not
depend on the number of workers.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from loguru import logger as logging

from .geometry import Polyline, segment_hits_polytopes
from .numerics import (
    MC_CONFIDENCE,
    RngStream,
    binom_stderr,
    binom_upper_ci,
    chi2_isf,
)
from .pgdf import (
    Coupling,
    PgdfObstacle,
    faces_from_standard,
    halfspaces_in_cone,
)
from .utils import TqdmStyle, make_tqdm

MC_CHUNK_SIZE = 10_000
"""Number of trials per chunk (and per spawned stream)"""


@dataclass(frozen=True)
class McReport:
    """Outcome of a Monte-Carlo frequency estimate"""

    trials: int
    hits: int

    p_hat: float
    """`hits / trials`"""

    upper_ci: float
    """One-sided Clopper-Pearson upper bound at confidence `MC_CONFIDENCE`"""

    seed: int

    @property
    def stderr(self) -> float:
        """Plug-in standard error of `p_hat`"""
        return binom_stderr(self.hits, self.trials)

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "trials": self.trials,
            "hits": self.hits,
            "p_hat": self.p_hat,
            "stderr": self.stderr,
            "upper_ci": self.upper_ci,
            "seed": self.seed,
        }


def make_report(hits: int, trials: int, seed: int) -> McReport:
    """Builds a report from raw counts"""
    return McReport(
        trials=trials,
        hits=hits,
        p_hat=hits / trials,
        upper_ci=binom_upper_ci(hits, trials, MC_CONFIDENCE),
        seed=seed,
    )


def sample_world(
    obstacles: Sequence[PgdfObstacle],
    rng: RngStream,
    size: int,
    coupling: Coupling = "independent",
) -> list[np.ndarray]:
    """
    Draws `size` joint realizations of all obstacles. With the `comonotone`
    coupling, every face of every obstacle is driven by the same standard
    normal vector.

    Returns:
        One `(size, m, d + 1)` array per obstacle.
    """
    if coupling not in ("independent", "comonotone"):
        raise ValueError(f"Unknown coupling '{coupling}'")
    shared: np.ndarray | None = None
    worlds = []
    for o in obstacles:
        m, k = len(o), o.dim + 1
        if coupling == "comonotone":
            if shared is None:
                shared = rng.generator.standard_normal((size, 1, k))
            z = np.repeat(shared, m, axis=1)
        else:
            z = rng.generator.standard_normal((size, m, k))
        worlds.append(faces_from_standard(o, z))
    return worlds


def volume_hits(worlds: Sequence[np.ndarray], vol: Polyline) -> np.ndarray:
    """
    Whether each sampled world has an obstacle that intersects `vol`.

    Args:
        worlds (Sequence[np.ndarray]): As returned by `sample_world`
        vol (Polyline):

    Returns:
        A boolean array of the batch size.
    """
    if not worlds:
        return np.zeros(0, dtype=bool)
    hit = np.zeros(worlds[0].shape[0], dtype=bool)
    for faces in worlds:
        for a, b in vol.segments():
            hit |= segment_hits_polytopes(a, b, faces)
    return hit


def _collision_chunk(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    size: int,
    rng: RngStream,
    coupling: Coupling,
) -> int:
    worlds = sample_world(obstacles, rng, size, coupling)
    return int(volume_hits(worlds, vol).sum())


def _chunk_sizes(trials: int, chunk_size: int) -> list[int]:
    n = math.ceil(trials / chunk_size)
    return [min(chunk_size, trials - i * chunk_size) for i in range(n)]


def mc_collision_prob(
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
    trials: int,
    rng: RngStream,
    coupling: Coupling = "independent",
    n_jobs: int = 1,
    chunk_size: int = MC_CHUNK_SIZE,
    tqdm_style: TqdmStyle = None,
) -> McReport:
    """
    Frequency of sampled worlds in which some obstacle intersects some
    segment of `vol`.

    Args:
        obstacles (Sequence[PgdfObstacle]):
        vol (Polyline):
        trials (int): At least 1
        rng (RngStream): Only used to spawn one stream per chunk
        coupling (Coupling, optional):
        n_jobs (int, optional): Number of joblib workers
        chunk_size (int, optional):
        tqdm_style (TqdmStyle, optional): Progress bar over chunks, only
            used when running serially
    """
    if trials < 1:
        raise ValueError(f"Number of trials must be positive, got {trials}")
    if not obstacles:
        return make_report(0, trials, rng.seed)
    sizes = _chunk_sizes(trials, chunk_size)
    streams = rng.spawn(len(sizes))
    jobs = [
        delayed(_collision_chunk)(obstacles, vol, s, r, coupling)
        for s, r in zip(sizes, streams)
    ]
    logging.debug("Number of Monte-Carlo chunks: {}", len(jobs))
    if len(jobs) <= 1 or n_jobs == 1:
        progress = make_tqdm(tqdm_style)(jobs, "Sampling")
        counts = [j[0](*j[1], **j[2]) for j in progress]
    else:
        counts = Parallel(n_jobs=n_jobs)(jobs)
    report = make_report(sum(counts), trials, rng.seed)  # type: ignore
    logging.debug(
        "Collision frequency {:.6g} ({} / {})",
        report.p_hat,
        report.hits,
        trials,
    )
    return report


def mc_containment(
    o: PgdfObstacle,
    eps: float,
    trials: int,
    rng: RngStream,
    coupling: Coupling = "independent",
    chunk_size: int = MC_CHUNK_SIZE,
) -> McReport:
    """
    Frequency of sampled realizations of `o` that are contained in its
    shadow at risk `eps`. Containment is tested face by face with the exact
    cone condition (`safeshadow.pgdf.halfspaces_in_cone`) at
    `q = chi2_isf(eps / m, d + 1)`, since an unbounded region cannot be
    checked by sampling points. The guarantee is `p_hat >= 1 - eps` in
    expectation.
    """
    if trials < 1:
        raise ValueError(f"Number of trials must be positive, got {trials}")
    if not 0 < eps < 1:
        raise ValueError(f"Shadow risk must be in (0, 1), got {eps}")
    q = chi2_isf(eps / len(o), o.dim + 1)
    sizes = _chunk_sizes(trials, chunk_size)
    hits = 0
    for size, r in zip(sizes, rng.spawn(len(sizes))):
        (faces,) = sample_world([o], r, size, coupling)
        inside = np.ones(size, dtype=bool)
        for i, f in enumerate(o.faces):
            inside &= halfspaces_in_cone(faces[:, i], f, q)
        hits += int(inside.sum())
    return make_report(hits, trials, rng.seed)
