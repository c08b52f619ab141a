"""
Chi-squared and Gaussian numerics: CDF and quantiles, multivariate normal
sampling, and binomial confidence bounds for the Monte-Carlo oracle.

All shadows of a face in `R^d` use `d + 1` degrees of freedom (the dimension
of the homogeneous face parameter), never `d`.
"""

from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import bisect
from scipy.special import gammainc, gammaincc
from scipy.stats import beta

from .geometry import DimensionMismatch, cholesky
from .utils import to_array

MC_CONFIDENCE = 0.999
"""Default confidence of the Clopper-Pearson bounds reported by the oracle."""

_BISECT_KWARGS = {
    "xtol": 1e-15,
    "rtol": 4 * np.finfo(float).eps,
    "maxiter": 500,
}


def _check_dof(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"Degrees of freedom must be positive, got {k}")


def chi2_cdf(x: float, k: int) -> float:
    """
    Regularized lower incomplete gamma function `P(k / 2, x / 2)`, i.e. the
    CDF of the chi-squared distribution with `k` degrees of freedom.
    """
    _check_dof(k)
    if x < 0:
        raise ValueError(f"chi2_cdf is defined on x >= 0, got {x}")
    return float(gammainc(k / 2, x / 2))


def chi2_sf(x: float, k: int) -> float:
    """Upper tail `1 - chi2_cdf(x, k)`, computed without cancellation."""
    _check_dof(k)
    if x < 0:
        raise ValueError(f"chi2_sf is defined on x >= 0, got {x}")
    return float(gammaincc(k / 2, x / 2))


def _bracket(f, k: int) -> float:  # type: ignore
    """Smallest `hi = k * 2^j` such that `f(hi) > 0`"""
    hi = float(max(k, 1))
    while f(hi) <= 0:
        hi *= 2
    return hi


@lru_cache(maxsize=4096)
def chi2_quantile(p: float, k: int) -> float:
    """
    Inverse of `chi2_cdf` by bracketing bisection, so that the returned `x`
    satisfies `chi2_cdf(x, k) = p` up to floating point resolution.

    Args:
        p (float): Must be in `(0, 1)`
        k (int): Degrees of freedom
    """
    _check_dof(k)
    if not 0 < p < 1:
        raise ValueError(f"Quantile level must be in (0, 1), got {p}")
    f = lambda x: float(gammainc(k / 2, x / 2)) - p
    return float(bisect(f, 0.0, _bracket(f, k), **_BISECT_KWARGS))


@lru_cache(maxsize=4096)
def chi2_isf(eps: float, k: int) -> float:
    """
    Inverse of `chi2_sf`: the `x` such that `P(X > x) = eps` for `X` chi
    squared with `k` degrees of freedom. Mathematically equal to
    `chi2_quantile(1 - eps, k)`, but bisects on the upper tail, so the
    relative precision on `eps` is kept even for `eps` around `1e-9`.
    """
    _check_dof(k)
    if not 0 < eps < 1:
        raise ValueError(f"Tail probability must be in (0, 1), got {eps}")
    f = lambda x: eps - float(gammaincc(k / 2, x / 2))
    return float(bisect(f, 0.0, _bracket(f, k), **_BISECT_KWARGS))


class RngStream:
    """
    Explicitly seeded pseudorandom stream, backed by numpy's counter-based
    Philox bit generator. There is no global state: two streams built from the
    same seed produce bit-identical sequences.

    Example:

        ```python
        rng = RngStream(42)
        x = rng.generator.uniform(size=3)
        children = rng.spawn(4)  # e.g. one per worker
        ```
    """

    seed_sequence: np.random.SeedSequence
    generator: np.random.Generator

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        """
        Args:
            seed (int | np.random.SeedSequence, optional): A non-negative
                integer (only the low 64 bits matter in practice), or a seed
                sequence obtained from `spawn`.
        """
        if isinstance(seed, np.random.SeedSequence):
            self.seed_sequence = seed
        else:
            self.seed_sequence = np.random.SeedSequence(int(seed))
        self.generator = np.random.Generator(
            np.random.Philox(self.seed_sequence)
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"

    @property
    def seed(self) -> int:
        """Root entropy of this stream"""
        return int(self.seed_sequence.entropy)  # type: ignore

    def spawn(self, n: int) -> list["RngStream"]:
        """
        Derives `n` independent child streams. Spawning is deterministic given
        the sequence of previous `spawn` calls on this stream.
        """
        return [RngStream(s) for s in self.seed_sequence.spawn(n)]


def sample_gaussians(
    mu: ArrayLike, sigma: ArrayLike, rng: RngStream, size: int
) -> np.ndarray:
    """
    Draws `size` samples of `N(mu, sigma)` as `mu + L z` where `L L^T = sigma`
    (see `safeshadow.geometry.cholesky`) and `z` is standard normal.

    Returns:
        A `(size, k)` array, where `k` is the length of `mu`.
    """
    mu = to_array(mu, dtype=float)
    l, _ = cholesky(sigma)
    if l.shape[0] != mu.shape[0]:
        raise DimensionMismatch(
            f"Mean has size {mu.shape[0]} but covariance is {l.shape}"
        )
    z = rng.generator.standard_normal((size, mu.shape[0]))
    return mu + z @ l.T


def sample_gaussian(
    mu: ArrayLike, sigma: ArrayLike, rng: RngStream
) -> np.ndarray:
    """Draws a single sample of `N(mu, sigma)`. See `sample_gaussians`."""
    return sample_gaussians(mu, sigma, rng, 1)[0]


def binom_upper_ci(
    successes: int, trials: int, conf: float = MC_CONFIDENCE
) -> float:
    """
    One-sided Clopper-Pearson upper confidence bound on a binomial proportion,
    i.e. the `conf` quantile of `Beta(successes + 1, trials - successes)`.

    Example:

        >>> binom_upper_ci(0, 100, 0.95)  # 1 - 0.05 ** (1 / 100)
        0.029513...
    """
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(
            f"Invalid binomial counts: {successes} successes out of {trials}"
        )
    if successes == trials:
        return 1.0
    return float(beta.ppf(conf, successes + 1, trials - successes))


def binom_stderr(successes: int, trials: int) -> float:
    """Plug-in standard error `sqrt(p (1 - p) / n)` of `p = successes / n`"""
    p = successes / trials
    return float(np.sqrt(p * (1 - p) / trials))
