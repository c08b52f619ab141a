"""
Safety certificates: maximal shadow search, certificate data model and
verification, and union bound tightness estimates.
"""

__all__ = [
    "BisectionLoop",
    "DEFAULT_EPS_FLOOR",
    "DEFAULT_EPS_PRECISION",
    "DigestMismatch",
    "ObstacleCert",
    "ObstacleStatus",
    "SafetyCertificate",
    "SearchSchedule",
    "UnionGapReport",
    "assemble_certificate",
    "find_maximal_shadow",
    "find_maximal_shadow_set",
    "find_uniform_shadow_set",
    "load_certificate",
    "round_up_sum",
    "save_certificate",
    "union_bound_gap_estimate",
    "verify_certificate",
]

from .certificate import (
    DigestMismatch,
    ObstacleCert,
    ObstacleStatus,
    SafetyCertificate,
    assemble_certificate,
    load_certificate,
    round_up_sum,
    save_certificate,
    verify_certificate,
)
from .search import (
    DEFAULT_EPS_FLOOR,
    DEFAULT_EPS_PRECISION,
    BisectionLoop,
    SearchSchedule,
    find_maximal_shadow,
    find_maximal_shadow_set,
    find_uniform_shadow_set,
)
from .tightness import UnionGapReport, union_bound_gap_estimate
