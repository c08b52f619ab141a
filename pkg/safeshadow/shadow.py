"""
ε-shadows of Gaussian faces and PGDF obstacles.

For a face `N(mu, sigma)` and a squared radius `q = chi2_isf(eps, d + 1)`, the
shadow is the union of the halfspaces `{x | a^T (x, 1) <= 0}` over all `a` in
the confidence ellipsoid `{a | (a - mu)^T sigma^+ (a - mu) <= q}`. Taking the
infimum of `a^T (x, 1)` over the ellipsoid gives the closed form

    x in shadow  <=>  h(x) = -mu^T x~ + sqrt(q x~^T sigma x~) >= 0

with `x~ = (x, 1)`. Equivalently, a sampled face vector lies in the cone
spanned by the ellipsoid (see `safeshadow.pgdf.halfspaces_in_cone`) iff its
halfspace is contained in the shadow, which happens with probability at least
`1 - eps`. The shadow of an obstacle with `m` faces is the intersection of
its face shadows at risk `eps / m` each.

If the ellipsoid contains the origin, the (face, eps) pair is *degenerate*
and its shadow is the whole space.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from contourpy import contour_generator
from numpy.typing import ArrayLike
from scipy.optimize import bisect

from .geometry import Box, DimensionMismatch, Polyline, lift
from .numerics import chi2_isf, chi2_sf
from .pgdf import GaussianFace, PgdfObstacle
from .utils import to_array

COVERAGE_TOLERANCE = 1e-12
"""
Gap endpoints strictly inside `(0, 1)` are shrunk by this amount before
checking coverage, so that touching gaps count as a hit.
"""


class Gap(NamedTuple):
    """
    Sub-interval `(lo, hi)` of `[0, 1]` of segment parameters outside a face
    shadow. The interval is open except at `0` and `1`, which belong to it
    when `lo == 0` (resp. `hi == 1`).
    """

    lo: float
    hi: float


@dataclass(frozen=True, eq=False)
class FaceShadow:
    """ε-shadow of a single Gaussian face"""

    face: GaussianFace
    eps: float
    q: float
    """Squared chi-squared radius with `d + 1` degrees of freedom"""

    degenerate: bool
    """Whether the confidence ellipsoid contains the origin"""


@dataclass(frozen=True, eq=False)
class ObstacleShadow:
    """ε-shadow of an obstacle, intersection of its face shadows"""

    obstacle_id: str
    face_shadows: tuple[FaceShadow, ...]
    eps: float

    @property
    def q(self) -> list[float]:
        """Per-face squared radii"""
        return [fs.q for fs in self.face_shadows]


def make_face_shadow(
    face: GaussianFace, eps: float, q: float | None = None
) -> FaceShadow:
    """
    Args:
        face (GaussianFace):
        eps (float): Risk in `(0, 1)`
        q (float | None, optional): Squared radius. If left to `None`, it is
            `chi2_isf(eps, d + 1)`. Only certificate verification passes it
            explicitly.
    """
    if q is None:
        q = chi2_isf(eps, face.dim + 1)
    return FaceShadow(
        face=face, eps=eps, q=q, degenerate=face.contains_origin(q)
    )


def make_obstacle_shadow(
    o: PgdfObstacle, eps: float, face_q: Sequence[float] | None = None
) -> ObstacleShadow:
    """
    Builds the ε-shadow of `o` by giving a risk of `eps / m` to each of its
    `m` faces. The result contains the obstacle with probability at least
    `1 - eps`.
    """
    if not 0 < eps < 1:
        raise ValueError(f"Shadow risk must be in (0, 1), got {eps}")
    m = len(o)
    qs = [None] * m if face_q is None else list(face_q)
    if len(qs) != m:
        raise DimensionMismatch(
            f"Obstacle '{o.id}' has {m} faces but {len(qs)} radii were given"
        )
    return ObstacleShadow(
        obstacle_id=o.id,
        face_shadows=tuple(
            make_face_shadow(f, eps / m, q) for f, q in zip(o.faces, qs)
        ),
        eps=eps,
    )


def face_shadow_h(fs: FaceShadow, xs: ArrayLike) -> np.ndarray:
    """
    Signed membership margin `h(x) = -mu^T x~ + sqrt(q x~^T sigma x~)` for a
    `(N, d)` batch of points. Non-negative iff the point is in the shadow.
    Degenerate shadows have margin `+inf` everywhere.
    """
    xt = lift(to_array(xs, dtype=float).reshape(-1, fs.face.dim))
    if fs.degenerate:
        return np.full(xt.shape[0], np.inf)
    g = xt @ fs.face.mu
    s = np.einsum("ni,ij,nj->n", xt, fs.face.sigma, xt)
    return -g + np.sqrt(np.clip(fs.q * s, 0.0, None))


def face_shadow_membership(fs: FaceShadow, x: ArrayLike) -> bool:
    """Whether `x` is in the face shadow"""
    return bool(face_shadow_h(fs, x)[0] >= 0)


def obstacle_shadow_membership(os: ObstacleShadow, x: ArrayLike) -> bool:
    """Whether `x` is in every face shadow"""
    return all(face_shadow_membership(fs, x) for fs in os.face_shadows)


def segment_terms(
    faces: Sequence[GaussianFace], vol: Polyline
) -> np.ndarray:
    """
    Radius-independent coefficients of the membership margin along every
    segment of `vol`, for every face. Along `x(t) = (1 - t) a + t b`,

        mu^T x~(t) = g0 + g1 t
        x~(t)^T sigma x~(t) = s0 + s1 t + s2 t^2

    Returns:
        A `(S, m, 5)` array of `(g0, g1, s0, s1, s2)`, where `S` is the number
        of segments (see `safeshadow.geometry.Polyline.segments`).
    """
    segs = list(vol.segments())
    at = lift(np.stack([a for a, _ in segs]))
    dt = lift(np.stack([b for _, b in segs])) - at
    mu = np.stack([f.mu for f in faces])
    sigma = np.stack([f.sigma for f in faces])
    return np.stack(
        [
            at @ mu.T,
            dt @ mu.T,
            np.einsum("si,mij,sj->sm", at, sigma, at),
            2 * np.einsum("si,mij,sj->sm", at, sigma, dt),
            np.einsum("si,mij,sj->sm", dt, sigma, dt),
        ],
        axis=-1,
    )


def _margin(t: float, terms: Sequence[float], q: float) -> float:
    g0, g1, s0, s1, s2 = terms
    s = s0 + t * (s1 + t * s2)
    return -(g0 + g1 * t) + math.sqrt(max(q * s, 0.0))


def _quadratic_roots(a: float, b: float, c: float) -> list[float]:
    """Real roots of `a t^2 + b t + c`, numerically stable form"""
    scale = abs(a) + abs(b) + abs(c)
    if scale == 0:
        return []
    if abs(a) <= 1e-14 * scale:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [r / a]
    if r != 0:
        roots.append(c / r)
    return roots


def _raw_gap(
    terms: Sequence[float], q: float
) -> tuple[Gap, list[float], int, int] | None:
    """
    Gap of one face shadow on one segment, with endpoints taken from the
    breakpoints of the margin: 0, 1, the root of `mu^T x~(t)`, and the roots
    of `(mu^T x~)^2 - q x~^T sigma x~`. Since the margin is convex, its
    negative set is an interval whose endpoints are among these breakpoints.

    Returns:
        `None` if the gap is empty, otherwise the gap, the sorted breakpoints,
        and the indices of the first and last negative pieces.
    """
    g0, g1, s0, s1, s2 = terms
    candidates = [0.0, 1.0]
    if g1 != 0:
        candidates.append(-g0 / g1)
    candidates += _quadratic_roots(
        g1 * g1 - q * s2, 2 * g0 * g1 - q * s1, g0 * g0 - q * s0
    )
    bps = sorted({float(t) for t in candidates if 0 <= t <= 1})
    negative = [
        i
        for i in range(len(bps) - 1)
        if _margin((bps[i] + bps[i + 1]) / 2, terms, q) < 0
    ]
    if not negative:
        return None
    first, last = negative[0], negative[-1]
    return Gap(bps[first], bps[last + 1]), bps, first, last


def segment_face_gap(fs: FaceShadow, s: tuple) -> Gap | None:
    """
    Maximal sub-interval of `[0, 1]` of parameters `t` such that
    `(1 - t) a + t b` is outside the face shadow, where `s = (a, b)`. Interior
    endpoints are refined by bisection on the margin, so that `|h| <= 1e-9`
    there.

    Returns:
        The gap, or `None` if the segment is entirely in the shadow (always
        the case for degenerate shadows).
    """
    if fs.degenerate:
        return None
    terms = segment_terms([fs.face], Polyline(np.stack(s)))[0, 0].tolist()
    raw = _raw_gap(terms, fs.q)
    if raw is None:
        return None
    gap, bps, first, last = raw
    h = lambda t: _margin(t, terms, fs.q)
    lo, hi = gap
    if lo > 0:  # h >= 0 on the piece left of lo, h < 0 right of it
        a, b = (bps[first - 1] + lo) / 2, (lo + bps[first + 1]) / 2
        lo = float(bisect(h, a, b, xtol=1e-15)) if h(a) * h(b) < 0 else lo
    if hi < 1:
        a, b = (bps[last] + hi) / 2, (hi + bps[last + 2]) / 2
        hi = float(bisect(h, a, b, xtol=1e-15)) if h(a) * h(b) < 0 else hi
    return Gap(lo, hi)


def _covers_unit_interval(gaps: list[Gap]) -> bool:
    """
    Whether the union of gaps covers `[0, 1]`, interior endpoints being
    shrunk by `COVERAGE_TOLERANCE`.
    """
    shrunk = sorted(
        Gap(
            g.lo if g.lo == 0 else g.lo + COVERAGE_TOLERANCE,
            g.hi if g.hi == 1 else g.hi - COVERAGE_TOLERANCE,
        )
        for g in gaps
    )
    if not shrunk or shrunk[0].lo != 0:
        return False
    reach = shrunk[0].hi
    for g in shrunk[1:]:
        if reach >= 1:
            break
        if g.lo >= reach:
            return False
        reach = max(reach, g.hi)
    return reach >= 1


def shadow_hits_volume(
    os: ObstacleShadow, vol: Polyline, terms: np.ndarray | None = None
) -> bool:
    """
    Whether the obstacle shadow intersects the polyline, i.e. whether on some
    segment, the face gaps fail to cover `[0, 1]`.

    Args:
        os (ObstacleShadow):
        vol (Polyline):
        terms (np.ndarray | None, optional): Precomputed
            `segment_terms([fs.face for fs in os.face_shadows], vol)`. Passing
            them saves some work when the same obstacle and volume are tested
            at many risk levels.
    """
    if terms is None:
        terms = segment_terms([fs.face for fs in os.face_shadows], vol)
    qs = os.q
    live = [i for i, fs in enumerate(os.face_shadows) if not fs.degenerate]
    for seg_terms in terms.tolist():
        gaps = []
        for i in live:
            raw = _raw_gap(seg_terms[i], qs[i])
            if raw is not None:
                gaps.append(raw[0])
        if not _covers_unit_interval(gaps):
            return True
    return False


def critical_eps_point(o: PgdfObstacle, x: ArrayLike) -> float:
    """
    Smallest risk whose shadow does not contain the point `x`, in closed
    form. Face `i` excludes `x` iff `q < (mu_i^T x~)^2 / (x~^T sigma_i x~)`
    (with `mu_i^T x~ > 0`), so the shadow at risk `eps` misses `x` iff `eps >
    m * chi2_sf(Q, d + 1)`, where `Q` is the largest of these ratios.

    Returns:
        A value in `[0, 1]`; `1` means that `x` is in the mean polytope.
    """
    xt = lift(to_array(x, dtype=float))
    best = 0.0
    for f in o.faces:
        g = float(f.mu @ xt)
        if g <= 0:
            continue
        s = float(xt @ f.sigma @ xt)
        best = max(best, g * g / s if s > 0 else float("inf"))
    if best == float("inf"):
        return 0.0
    if best == 0:
        return 1.0
    return min(1.0, len(o) * chi2_sf(best, o.dim + 1))


def shadow_boundary_2d(
    os: ObstacleShadow, window: Box, resolution: int = 200
) -> list[Polyline]:
    """
    Outline of a planar obstacle shadow, for rendering only. The margin
    `min_i h_i` is evaluated on a `resolution x resolution` grid over the
    window and its zero level set is extracted by marching squares.

    Returns:
        Polylines (closed polylines repeat their first point). Shadows that
        are unbounded get clipped by the window.
    """
    if os.face_shadows[0].face.dim != 2 or window.dim != 2:
        raise DimensionMismatch("Shadow outlines are only available in 2D")
    if resolution < 2:
        raise ValueError(f"Resolution must be at least 2, got {resolution}")
    xs = np.linspace(window.lo[0], window.hi[0], resolution)
    ys = np.linspace(window.lo[1], window.hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    field = np.min(
        np.stack([face_shadow_h(fs, pts) for fs in os.face_shadows]), axis=0
    )
    field = np.clip(field, -1e6, 1e6).reshape(gx.shape)
    lines = contour_generator(
        x=xs, y=ys, z=field, line_type="Separate"
    ).lines(0.0)
    return [Polyline(line) for line in lines if len(line) >= 2]
