"""
Homogeneous coordinates, polylines and deterministic polytope predicates.

A polytope is given by a `(m, d + 1)` array of face vectors `n_i` and is the
set `{x | n_i^T (x, 1) <= 0 for all i}`. All halfspace tests are closed, i.e.
points on a face boundary are inside.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, TypeAlias

import numpy as np
from numpy.typing import ArrayLike

from .utils import array_sha1, to_array

Segment: TypeAlias = tuple[np.ndarray, np.ndarray]
"""A pair of points `(a, b)`. `a == b` is allowed (zero length segment)."""

PSD_TOLERANCE = 1e-10
"""
Relative eigenvalue floor (w.r.t. the trace) below which a symmetric matrix is
considered indefinite.
"""

SYMMETRY_TOLERANCE = 1e-12
"""Relative tolerance on `M - M^T` for a matrix to be considered symmetric."""

SUPPORTED_DIMENSIONS = (2, 3)
"""Supported workspace dimensions."""


class NotPositiveSemidefinite(ValueError):
    """
    Raised by `cholesky`, `check_psd` and everything that factors a covariance
    matrix when the matrix has an eigenvalue below `-PSD_TOLERANCE * trace`.
    """


class DimensionMismatch(ValueError):
    """
    Raised when vectors, matrices or points of incompatible sizes are combined.
    """


def lift(p: ArrayLike) -> np.ndarray:
    """
    Lifts a point `(p_1, ..., p_d)` to homogeneous coordinates
    `(p_1, ..., p_d, 1)`. Also works on a `(N, d)` batch of points.
    """
    p = to_array(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("Points must have finite coordinates")
    ones = np.ones(p.shape[:-1] + (1,))
    return np.concatenate([p, ones], axis=-1)


def symmetrize(m: ArrayLike) -> np.ndarray:
    """
    Returns `(M + M^T) / 2`. Raises a `ValueError` if `M` is not square, not
    finite, or not symmetric within `SYMMETRY_TOLERANCE`.
    """
    m = to_array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("Matrix has non-finite entries")
    scale = max(float(np.abs(m).max(initial=0.0)), 1.0)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_TOLERANCE * scale:
        raise ValueError("Matrix is not symmetric")
    return (m + m.T) / 2


def quad_form(m: ArrayLike, v: ArrayLike) -> float:
    """Returns `v^T M v`."""
    m, v = to_array(m, dtype=float), to_array(v, dtype=float)
    if m.shape != (v.shape[-1], v.shape[-1]):
        raise DimensionMismatch(
            f"Cannot evaluate a {m.shape} quadratic form on a vector of "
            f"shape {v.shape}"
        )
    return float(v @ m @ v)


def check_psd(m: np.ndarray) -> np.ndarray:
    """
    Returns the eigenvalues of the symmetric matrix `m` if it is positive
    semidefinite up to `PSD_TOLERANCE`, raises `NotPositiveSemidefinite`
    otherwise.
    """
    w = np.linalg.eigvalsh(m)
    floor = -PSD_TOLERANCE * max(float(np.trace(m)), 1e-300)
    if w.size and w.min() < min(floor, 0.0):
        raise NotPositiveSemidefinite(
            f"Matrix has eigenvalue {w.min():.3g} < {floor:.3g}"
        )
    return w


def cholesky(m: ArrayLike) -> tuple[np.ndarray, bool]:
    """
    Lower triangular factor `L` such that `L L^T = M`.

    Returns:
        `L` and a degeneracy flag which is `True` iff `M` is singular. In that
        case `L` is obtained from an eigendecomposition followed by a QR step
        rather than from the standard Cholesky algorithm.

    Raises:
        NotPositiveSemidefinite: If `M` is indefinite.
    """
    m = symmetrize(m)
    try:
        return np.linalg.cholesky(m), False
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(m)
    floor = -PSD_TOLERANCE * max(float(np.trace(m)), 1e-300)
    if w.min() < min(floor, 0.0):
        raise NotPositiveSemidefinite(
            f"Matrix has eigenvalue {w.min():.3g} < {floor:.3g}"
        )
    b = v * np.sqrt(np.clip(w, 0.0, None))  # B B^T = M
    r = np.linalg.qr(b.T, mode="r")  # B^T = Q R => M = R^T R
    l = r.T
    l = l * np.where(np.diag(l) < 0, -1.0, 1.0)  # flip columns
    return l, True


def point_in_polytope(x: ArrayLike, faces: ArrayLike) -> bool:
    """
    Whether `x` satisfies `n^T lift(x) <= 0` for every row `n` of `faces`.
    """
    faces = to_array(faces, dtype=float)
    return bool(np.all(faces @ lift(x) <= 0))


def segment_hits_polytopes(
    a: ArrayLike, b: ArrayLike, faces: ArrayLike
) -> np.ndarray:
    """
    Batched interval clipping of the segment `[a, b]` against `N` polytopes.

    Each face `n` restricts the segment parameter `t` to the set where
    `n^T lift(a) + t n^T (lift(b) - lift(a)) <= 0`, which is a (possibly
    empty) interval. The segment hits the polytope iff the intersection of
    these intervals with `[0, 1]` is nonempty.

    Args:
        a (ArrayLike): `(d,)`
        b (ArrayLike): `(d,)`
        faces (ArrayLike): `(N, m, d + 1)`

    Returns:
        A `(N,)` boolean array.
    """
    faces = to_array(faces, dtype=float)
    at, bt = lift(a), lift(b)
    c0, c1 = faces @ at, faces @ (bt - at)  # (N, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -c0 / c1
    lo = np.where(c1 < 0, root, -np.inf).max(axis=-1, initial=0.0)
    hi = np.where(c1 > 0, root, np.inf).min(axis=-1, initial=1.0)
    parallel_out = np.any((c1 == 0) & (c0 > 0), axis=-1)
    return (lo <= hi) & ~parallel_out


def segment_hits_polytope(s: Segment, faces: ArrayLike) -> bool:
    """
    Whether some point of the segment `s = (a, b)` lies in the polytope. See
    `segment_hits_polytopes`.
    """
    faces = to_array(faces, dtype=float)
    return bool(segment_hits_polytopes(s[0], s[1], faces[np.newaxis])[0])


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box `[lo, hi]`, used as workspace or rendering window"""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = to_array(self.lo, dtype=float)
        hi = to_array(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch(
                "Box corners must be vectors of the same size"
            )
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("Box corners must be finite")
        if np.any(hi <= lo):
            raise ValueError(f"Degenerate box [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        """Dimension of the ambient space"""
        return self.lo.shape[0]

    @property
    def diagonal(self) -> float:
        """Length of the diagonal"""
        return float(np.linalg.norm(self.hi - self.lo))

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Polyline:
    """
    Ordered list of waypoints. This is the swept volume of a trajectory, i.e.
    the set of points the robot may visit. A single waypoint is a valid
    (point) volume.
    """

    waypoints: np.ndarray = field(repr=False)
    """`(k, d)` array with `k >= 1`."""

    def __post_init__(self) -> None:
        w = to_array(self.waypoints, dtype=float)
        if w.ndim == 1:
            w = w[np.newaxis]
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError("A polyline needs at least one waypoint")
        if w.shape[1] not in SUPPORTED_DIMENSIONS:
            raise DimensionMismatch(
                f"Unsupported workspace dimension {w.shape[1]}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("Waypoints must be finite")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "waypoints", w)

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of the ambient space"""
        return self.waypoints.shape[1]

    @cached_property
    def digest(self) -> str:
        """SHA1 of the waypoint array, used to bind certificates to volumes"""
        return array_sha1(self.waypoints)

    @property
    def length(self) -> float:
        """Total Euclidean length"""
        return float(
            np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum()
        )

    def segments(self) -> Iterator[Segment]:
        """
        Iterates over consecutive waypoint pairs. A single-waypoint polyline
        yields one zero-length segment.
        """
        if len(self) == 1:
            yield self.waypoints[0], self.waypoints[0]
            return
        for i in range(len(self) - 1):
            yield self.waypoints[i], self.waypoints[i + 1]

    def locate(
        self, p: ArrayLike, atol: float = 1e-9, start: int = 0
    ) -> tuple[int, float]:
        """
        Finds the first segment containing `p`, among the segments of index
        `start` or more. Polylines may pass through a point more than once.

        Returns:
            A pair `(i, t)` such that `p` is (within `atol`) the point
            `(1 - t) w_i + t w_{i+1}`. For single-waypoint polylines, `i` is
            0 and `t` is 0.

        Raises:
            ValueError: If `p` is not on the polyline.
        """
        p = to_array(p, dtype=float)
        for i, (a, b) in enumerate(self.segments()):
            if i < start:
                continue
            ab = b - a
            n2 = float(ab @ ab)
            t = 0.0 if n2 == 0 else float(np.clip((p - a) @ ab / n2, 0, 1))
            if np.linalg.norm(a + t * ab - p) <= atol * max(
                1.0, float(np.abs(p).max(initial=0.0))
            ):
                return i, t
        raise ValueError(f"Point {p} is not on the polyline")

    def split_at(
        self, p: ArrayLike, start: int = 0
    ) -> tuple["Polyline", "Polyline"]:
        """
        Splits the polyline at point `p` (see `locate`). Both parts contain
        `p`.
        """
        i, t = self.locate(p, start=start)
        w = self.waypoints
        if len(self) == 1:
            return Polyline(w), Polyline(w)
        q = (1 - t) * w[i] + t * w[i + 1]
        head = np.vstack([w[: i + 1], q[np.newaxis]])
        tail = np.vstack([q[np.newaxis], w[i + 1 :]])
        return Polyline(_dedup(head)), Polyline(_dedup(tail))

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {"waypoints": self.waypoints.tolist()}


def _dedup(w: np.ndarray) -> np.ndarray:
    """Removes consecutive duplicate waypoints"""
    keep = np.ones(w.shape[0], dtype=bool)
    keep[1:] = np.any(w[1:] != w[:-1], axis=1)
    return w[keep]
