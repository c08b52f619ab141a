"""
Polytopes with Gaussian distributed faces (PGDF).

An obstacle is `{x | n_i^T (x, 1) <= 0 for all i}` where each homogeneous face
vector `n_i` is drawn from `N(mu_i, Sigma_i)`. This module holds the obstacle
model, sampling, the exact cone containment test used by the oracle, and the
Bayesian fit of a face from a segmented point cloud.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence, TypeAlias

import numpy as np
from loguru import logger as logging
from numpy.typing import ArrayLike

from .geometry import (
    SUPPORTED_DIMENSIONS,
    DimensionMismatch,
    check_psd,
    cholesky,
    lift,
    symmetrize,
)
from .numerics import RngStream
from .utils import to_array

Coupling: TypeAlias = Literal["independent", "comonotone"]
"""
Joint law of the face draws. `"independent"` draws every face (and every
obstacle) from its own standard normal vector; `"comonotone"` uses one shared
standard normal vector for all faces, which is the worst case for union
bounds.
"""

SampledObstacle: TypeAlias = np.ndarray
"""`(m, d + 1)` array of concrete face vectors, one per face."""

RANGE_TOLERANCE = 1e-12
"""
Relative eigenvalue threshold (w.r.t. the largest eigenvalue) under which a
direction is considered to be in the null space of a covariance matrix.
"""

NULL_RESIDUAL_TOLERANCE = 1e-9
"""
Tolerance on null-space residuals in `halfspaces_in_cone` and
`GaussianFace.contains_origin` (relative to the norm of the mean).
"""

_FIT_CHUNK_SIZE = 256


@dataclass(frozen=True, eq=False)
class GaussianFace:
    """Gaussian posterior `N(mu, sigma)` over one homogeneous face vector"""

    mu: np.ndarray
    """`(d + 1,)` mean face vector"""

    sigma: np.ndarray = field(repr=False)
    """`(d + 1, d + 1)` positive semidefinite covariance matrix"""

    def __post_init__(self) -> None:
        mu = to_array(self.mu, dtype=float).copy()
        if mu.ndim != 1 or mu.shape[0] - 1 not in SUPPORTED_DIMENSIONS:
            raise DimensionMismatch(
                f"Face mean must have size 3 or 4, got shape {mu.shape}"
            )
        if not np.all(np.isfinite(mu)):
            raise ValueError("Face mean must be finite")
        sigma = symmetrize(self.sigma)
        if sigma.shape != (mu.shape[0], mu.shape[0]):
            raise DimensionMismatch(
                f"Face mean has size {mu.shape[0]} but covariance has shape "
                f"{sigma.shape}"
            )
        check_psd(sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        """Workspace dimension `d`"""
        return self.mu.shape[0] - 1

    @cached_property
    def cholesky_factor(self) -> np.ndarray:
        """`L` with `L L^T = sigma` (see `safeshadow.geometry.cholesky`)"""
        return cholesky(self.sigma)[0]

    @cached_property
    def _spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of sigma restricted to its range"""
        w, v = np.linalg.eigh(self.sigma)
        keep = w > RANGE_TOLERANCE * max(float(w.max()), 0.0)
        return w[keep], v[:, keep]

    @cached_property
    def precision(self) -> np.ndarray:
        """Moore-Penrose pseudo-inverse of sigma"""
        w, v = self._spectrum
        return (v / w) @ v.T

    @cached_property
    def null_projector(self) -> np.ndarray:
        """Orthogonal projector onto the null space of sigma"""
        _, v = self._spectrum
        return np.eye(self.mu.shape[0]) - v @ v.T

    @cached_property
    def mahalanobis_origin(self) -> float:
        """
        `mu^T sigma^+ mu`, or `inf` if `-mu` is not in the range of sigma
        (then no point of the ellipsoid is the origin, whatever the radius).
        """
        r = self.null_projector @ self.mu
        if np.linalg.norm(r) > NULL_RESIDUAL_TOLERANCE * max(
            1.0, float(np.linalg.norm(self.mu))
        ):
            return float("inf")
        return float(self.mu @ self.precision @ self.mu)

    def contains_origin(self, q: float) -> bool:
        """
        Whether the confidence ellipsoid `{a | (a - mu)^T sigma^+ (a - mu) <=
        q}` contains the origin. If it does, arbitrarily small face vectors are
        plausible, and the shadow at that radius is the whole space.
        """
        return self.mahalanobis_origin <= q

    def to_dict(self) -> dict:
        """JSON friendly representation (covariance is row-major)"""
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.ravel().tolist(),
        }


@dataclass(frozen=True, eq=False)
class PgdfObstacle:
    """An uncertain polytope made of Gaussian faces"""

    id: str
    faces: tuple[GaussianFace, ...]

    joint_sigma: np.ndarray | None = field(default=None, repr=False)
    """
    Optional `(m (d + 1), m (d + 1))` covariance of the concatenated face
    vectors. Its diagonal blocks must be the face covariances. If `None`,
    faces are drawn independently.
    """

    def __post_init__(self) -> None:
        faces = tuple(self.faces)
        if not faces:
            raise ValueError(f"Obstacle '{self.id}' has no face")
        if len({f.dim for f in faces}) != 1:
            raise DimensionMismatch(
                f"Faces of obstacle '{self.id}' have different dimensions"
            )
        object.__setattr__(self, "faces", faces)
        if self.joint_sigma is not None:
            j = symmetrize(self.joint_sigma)
            m, k = len(faces), faces[0].mu.shape[0]
            if j.shape != (m * k, m * k):
                raise DimensionMismatch(
                    f"Joint covariance of obstacle '{self.id}' must have "
                    f"shape {(m * k, m * k)}, got {j.shape}"
                )
            check_psd(j)
            for i, f in enumerate(faces):
                b = j[i * k : (i + 1) * k, i * k : (i + 1) * k]
                if not np.allclose(b, f.sigma, rtol=1e-9, atol=1e-12):
                    raise ValueError(
                        f"Diagonal block {i} of the joint covariance of "
                        f"obstacle '{self.id}' does not match face {i}"
                    )
            object.__setattr__(self, "joint_sigma", j)

    def __len__(self) -> int:
        return len(self.faces)

    @property
    def dim(self) -> int:
        """Workspace dimension `d`"""
        return self.faces[0].dim

    @cached_property
    def mean_faces(self) -> np.ndarray:
        """`(m, d + 1)` array of mean face vectors (the mean polytope)"""
        return np.stack([f.mu for f in self.faces])

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        d: dict = {
            "id": self.id,
            "faces": [f.to_dict() for f in self.faces],
        }
        if self.joint_sigma is not None:
            d["joint_sigma"] = self.joint_sigma.ravel().tolist()
        return d


@dataclass(frozen=True, eq=False)
class FacePointCloud:
    """Points segmented onto one face, with a noise level and a prior"""

    points: np.ndarray
    """`(N, d)`, `N` may be 0"""

    noise_sd: float
    """
    Standard deviation of the residual `n^T (x, 1)` of a point `x` measured on
    the face (the face vector being normalized by the gauge of `fit_face`).
    """

    prior: GaussianFace

    def __post_init__(self) -> None:
        p = to_array(self.points, dtype=float).reshape(-1, self.prior.dim)
        if not np.all(np.isfinite(p)):
            raise ValueError("Point cloud has non-finite coordinates")
        if not self.noise_sd > 0:
            raise ValueError(f"noise_sd must be positive, got {self.noise_sd}")
        object.__setattr__(self, "points", p)


def faces_from_standard(o: PgdfObstacle, z: np.ndarray) -> np.ndarray:
    """
    Maps standard normal draws to face vectors of `o`.

    Args:
        o (PgdfObstacle):
        z (np.ndarray): `(N, m, d + 1)` standard normal array. For a
            comonotone coupling, pass the same vector for every face (e.g.
            with `np.broadcast_to`).

    Returns:
        A `(N, m, d + 1)` array of face vectors.
    """
    n, m, k = z.shape[0], len(o), o.dim + 1
    if z.shape != (n, m, k):
        raise DimensionMismatch(
            f"Expected standard normals of shape {(n, m, k)}, got {z.shape}"
        )
    if o.joint_sigma is not None:
        l, _ = cholesky(o.joint_sigma)
        x = o.mean_faces.ravel() + z.reshape(n, m * k) @ l.T
        return x.reshape(n, m, k)
    return o.mean_faces + np.stack(
        [z[:, i] @ f.cholesky_factor.T for i, f in enumerate(o.faces)],
        axis=1,
    )


def sample_obstacles(
    o: PgdfObstacle,
    rng: RngStream,
    size: int,
    coupling: Coupling = "independent",
) -> np.ndarray:
    """
    Draws `size` realizations of `o`.

    Returns:
        A `(size, m, d + 1)` array.
    """
    m, k = len(o), o.dim + 1
    if coupling == "independent":
        z = rng.generator.standard_normal((size, m, k))
    elif coupling == "comonotone":
        z = np.repeat(
            rng.generator.standard_normal((size, 1, k)), m, axis=1
        )
    else:
        raise ValueError(f"Unknown coupling '{coupling}'")
    return faces_from_standard(o, z)


def sample_obstacle(o: PgdfObstacle, rng: RngStream) -> SampledObstacle:
    """Draws one realization of `o`. See `sample_obstacles`."""
    return sample_obstacles(o, rng, 1)[0]


def halfspaces_in_cone(
    ns: ArrayLike, face: GaussianFace, q: float
) -> np.ndarray:
    """
    Vectorized cone containment test: for each row `n` of `ns`, whether there
    exists `lambda > 0` such that `(lambda n - mu)^T sigma^{-1} (lambda n -
    mu) <= q`, i.e. whether the halfspace of `n` is one of the halfspaces
    swept by the chi-squared ellipsoid of radius `q`.

    If sigma is invertible, the optimal `lambda` is `n^T P mu / n^T P n` (with
    `P = sigma^{-1}`), clamped to `(0, inf)`. If sigma is singular, `P` is the
    pseudo-inverse and `lambda n - mu` must additionally have a null-space
    component of norm at most `NULL_RESIDUAL_TOLERANCE * max(1, |mu|)`.

    Args:
        ns (ArrayLike): `(N, d + 1)`
        face (GaussianFace):
        q (float): Squared radius of the ellipsoid, `>= 0`

    Returns:
        A `(N,)` boolean array.
    """
    ns = to_array(ns, dtype=float).reshape(-1, face.mu.shape[0])
    p, z, mu = face.precision, face.null_projector, face.mu
    tol = NULL_RESIDUAL_TOLERANCE * max(1.0, float(np.linalg.norm(mu)))
    a = np.einsum("ni,ij,nj->n", ns, p, ns)
    b = ns @ (p @ mu)
    c = float(mu @ p @ mu)
    rn, rm = ns @ z.T, z @ mu
    rn_norm2 = np.einsum("ni,ni->n", rn, rn)
    in_range = np.sqrt(rn_norm2) <= tol

    # n has no null-space component: lambda is free
    with np.errstate(divide="ignore", invalid="ignore"):
        free_value = np.where(
            (a > 0) & (b > 0), c - np.square(b) / a, c
        )
    free_ok = in_range & (np.linalg.norm(rm) <= tol) & (free_value <= q)

    # otherwise lambda is pinned by the null-space condition
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (rn @ rm) / rn_norm2
    residual = np.linalg.norm(lam[:, None] * rn - rm, axis=1)
    pinned_value = np.square(lam) * a - 2 * lam * b + c
    pinned_ok = (
        ~in_range & (lam > 0) & (residual <= tol) & (pinned_value <= q)
    )
    return free_ok | pinned_ok


def halfspace_in_cone(n: ArrayLike, face: GaussianFace, q: float) -> bool:
    """Scalar version of `halfspaces_in_cone`"""
    return bool(halfspaces_in_cone(n, face, q)[0])


def fit_face(cloud: FacePointCloud) -> GaussianFace:
    """
    Bayesian linear regression of a face vector from points lying on the face.

    Homogeneous face vectors are only defined up to scale, so the coordinate
    `j` of the prior mean with the largest magnitude is pinned to its prior
    value `c` (gauge fixing). Each point `x` then gives the observation
    `-c x~_j = n_F^T x~_F + noise`, where `F` are the other coordinates and
    `noise ~ N(0, noise_sd^2)`. The prior on `n_F` is the prior face
    distribution conditioned on `n_j = c`.

    If the conditioned prior covariance is positive definite, the posterior is
    computed in information form

        Sigma_post = (Sigma_0^-1 + X^T X / s^2)^-1
        mu_post = Sigma_post (Sigma_0^-1 mu_0 + X^T y / s^2)

    and otherwise with the equivalent covariance form update, processed in
    chunks of points.

    Returns:
        The posterior face. Its covariance is zero on row and column `j`.
    """
    prior = cloud.prior
    if cloud.points.shape[0] == 0:
        return prior
    mu0, s0 = prior.mu, prior.sigma
    check_psd(s0)
    j = int(np.argmax(np.abs(mu0)))
    c = float(mu0[j])
    free = [i for i in range(mu0.shape[0]) if i != j]
    x = lift(cloud.points)
    design, y = x[:, free], -c * x[:, j]
    s2 = cloud.noise_sd**2

    m_f = mu0[free]
    s_ff = s0[np.ix_(free, free)]
    if s0[j, j] > 0:
        s_fj = s0[free, j]
        s_ff = s_ff - np.outer(s_fj, s_fj) / s0[j, j]
    s_ff = (s_ff + s_ff.T) / 2

    try:
        np.linalg.cholesky(s_ff)
        prior_precision = np.linalg.inv(s_ff)
        post_precision = prior_precision + design.T @ design / s2
        s_post = np.linalg.inv(post_precision)
        m_post = s_post @ (prior_precision @ m_f + design.T @ y / s2)
    except np.linalg.LinAlgError:
        logging.debug(
            "Singular conditioned prior, using covariance form update"
        )
        m_post, s_post = m_f.copy(), s_ff.copy()
        n_chunks = -(-design.shape[0] // _FIT_CHUNK_SIZE)
        for a, t in zip(
            np.array_split(design, n_chunks), np.array_split(y, n_chunks)
        ):
            g = a @ s_post @ a.T + s2 * np.eye(a.shape[0])
            k = np.linalg.solve(g, a @ s_post).T  # gain
            m_post = m_post + k @ (t - a @ m_post)
            s_post = s_post - k @ a @ s_post
    s_post = (s_post + s_post.T) / 2

    mu = np.empty_like(mu0)
    mu[j], mu[free] = c, m_post
    sigma = np.zeros_like(s0)
    sigma[np.ix_(free, free)] = s_post
    return GaussianFace(mu, sigma)


def fit_obstacle(
    obstacle_id: str, clouds: Sequence[FacePointCloud]
) -> PgdfObstacle:
    """Fits every face of an obstacle, see `fit_face`"""
    faces = tuple(fit_face(c) for c in clouds)
    logging.debug(
        "Fitted obstacle '{}' from {} points on {} faces",
        obstacle_id,
        sum(c.points.shape[0] for c in clouds),
        len(clouds),
    )
    return PgdfObstacle(id=obstacle_id, faces=faces)
