"""Safety certificate data model, serialization and verification"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence, TypeAlias

import turbo_broccoli as tb
from loguru import logger as logging

from ..geometry import Polyline
from ..numerics import chi2_isf
from ..pgdf import PgdfObstacle
from ..shadow import make_obstacle_shadow, shadow_hits_volume
from ..utils import dict_sha1

ObstacleStatus: TypeAlias = Literal[
    "CERTIFIED", "UNCERTIFIABLE", "DEGENERATE_FLOOR"
]
"""
Outcome of a shadow search for one obstacle.

- `CERTIFIED`: a shadow at the recorded risk misses the volume;
- `UNCERTIFIABLE`: the volume hits the mean polytope, the risk is 1;
- `DEGENERATE_FLOOR`: even the shadow at the risk floor misses the volume,
  the true risk is below numerical resolution.
"""

Allocation: TypeAlias = Literal["optimal", "uniform"]
"""How the total risk was split across obstacles."""


class DigestMismatch(ValueError):
    """
    Raised when a certificate is checked against a volume it was not issued
    for, see `verify_certificate`.
    """


@dataclass(frozen=True)
class ObstacleCert:
    """Certified risk of one obstacle"""

    obstacle_id: str

    eps: float
    """Risk in `(0, 1]`. A risk of 1 is trivially true."""

    face_q: tuple[float, ...]
    """
    Squared radius of each face shadow. All zeros if `eps` is 1, in which
    case no shadow is needed.
    """

    status: ObstacleStatus

    n_calls: int = field(default=0, compare=False)
    """Number of shadow/volume intersection tests the search used"""

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "id": self.obstacle_id,
            "eps": self.eps,
            "per_face_q": list(self.face_q),
            "status": self.status,
            "n_calls": self.n_calls,
        }

    @staticmethod
    def from_dict(d: dict) -> "ObstacleCert":
        """Inverse of `to_dict`"""
        return ObstacleCert(
            obstacle_id=str(d["id"]),
            eps=float(d["eps"]),
            face_q=tuple(float(q) for q in d["per_face_q"]),
            status=d["status"],
            n_calls=int(d.get("n_calls", 0)),
        )


@dataclass(frozen=True)
class SafetyCertificate:
    """
    Per-obstacle risks whose shadows miss a given volume. The probability of
    colliding with any obstacle while staying in the volume is at most
    `total_eps`.
    """

    per_obstacle: tuple[ObstacleCert, ...]
    """Sorted by obstacle id"""

    total_eps: float
    """Sum of the per-obstacle risks, rounded up"""

    volume_digest: str
    """See `safeshadow.geometry.Polyline.digest`"""

    eps_precision: float
    """Total precision `eps_p` the search was run with"""

    eps_floor: float
    allocation: Allocation = "optimal"

    @property
    def certified(self) -> bool:
        """`False` if some obstacle is `UNCERTIFIABLE`"""
        return all(c.status != "UNCERTIFIABLE" for c in self.per_obstacle)

    @property
    def n_calls(self) -> int:
        """Total number of intersection tests"""
        return sum(c.n_calls for c in self.per_obstacle)

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "volume_digest": self.volume_digest,
            "eps_precision": self.eps_precision,
            "eps_floor": self.eps_floor,
            "allocation": self.allocation,
            "per_obstacle": [c.to_dict() for c in self.per_obstacle],
            "total_eps": self.total_eps,
        }

    @staticmethod
    def from_dict(d: dict) -> "SafetyCertificate":
        """Inverse of `to_dict`"""
        return SafetyCertificate(
            per_obstacle=tuple(
                ObstacleCert.from_dict(c) for c in d["per_obstacle"]
            ),
            total_eps=float(d["total_eps"]),
            volume_digest=str(d["volume_digest"]),
            eps_precision=float(d["eps_precision"]),
            eps_floor=float(d["eps_floor"]),
            allocation=d.get("allocation", "optimal"),
        )


def assemble_certificate(
    certs: Iterable[ObstacleCert],
    vol: Polyline,
    eps_p: float,
    eps_floor: float,
    allocation: Allocation = "optimal",
) -> SafetyCertificate:
    """
    Deterministic reduction of per-obstacle results: sorts by obstacle id and
    sums the risks with `round_up_sum`.
    """
    per_obstacle = tuple(sorted(certs, key=lambda c: c.obstacle_id))
    return SafetyCertificate(
        per_obstacle=per_obstacle,
        total_eps=round_up_sum([c.eps for c in per_obstacle]),
        volume_digest=vol.digest,
        eps_precision=eps_p,
        eps_floor=eps_floor,
        allocation=allocation,
    )


def round_up_sum(xs: Sequence[float]) -> float:
    """
    Floating point sum that never understates the exact sum: the correctly
    rounded sum is bumped up by one unit in the last place whenever it is
    below the exact (rational) value.
    """
    s = math.fsum(xs)
    if Fraction(s) < sum((Fraction(x) for x in xs), Fraction(0)):
        return math.nextafter(s, math.inf)
    return s


def verify_certificate(
    cert: SafetyCertificate,
    obstacles: Sequence[PgdfObstacle],
    vol: Polyline,
) -> bool:
    """
    Cheap independent check of a certificate: one intersection test per
    obstacle and no search. A certificate is valid iff

    - it covers exactly the given obstacles,
    - every recorded radius is at least the radius implied by the recorded
      risk (a larger radius only makes the shadow larger),
    - every shadow rebuilt from the recorded radii misses the volume,
    - `total_eps` is the rounded up sum of the per-obstacle risks.

    Raises:
        DigestMismatch: If the certificate was not issued for `vol`.
    """
    if cert.volume_digest != vol.digest:
        raise DigestMismatch(
            f"Certificate was issued for volume {cert.volume_digest}, not "
            f"{vol.digest}"
        )
    by_id = {o.id: o for o in obstacles}
    if sorted(by_id) != sorted(c.obstacle_id for c in cert.per_obstacle):
        logging.debug("Certificate does not cover the given obstacles")
        return False
    if cert.total_eps != round_up_sum([c.eps for c in cert.per_obstacle]):
        logging.debug(
            "Certificate total {} is not the sum of its risks",
            cert.total_eps,
        )
        return False
    for c in cert.per_obstacle:
        o = by_id[c.obstacle_id]
        if c.eps >= 1:
            continue
        if not c.eps > 0 or len(c.face_q) != len(o):
            return False
        q_min = chi2_isf(c.eps / len(o), o.dim + 1)
        if any(q < q_min for q in c.face_q):
            logging.debug(
                "Radii of obstacle '{}' are too small for risk {}",
                c.obstacle_id,
                c.eps,
            )
            return False
        if shadow_hits_volume(make_obstacle_shadow(o, c.eps, c.face_q), vol):
            logging.debug(
                "Shadow of obstacle '{}' at risk {} hits the volume",
                c.obstacle_id,
                c.eps,
            )
            return False
    return True


def save_certificate(
    cert: SafetyCertificate, path: str | Path, **meta: Any
) -> None:
    """
    Writes a certificate to a JSON file, with optional metadata. The
    metadata block also records a hash of the certificate itself.
    """
    document = cert.to_dict()
    document["__meta__"] = {**meta, "hash": dict_sha1(document)}
    tb.save_json(document, path)


def load_certificate(path: str | Path) -> SafetyCertificate:
    """Reads a certificate written by `save_certificate`"""
    return SafetyCertificate.from_dict(tb.load_json(path))
