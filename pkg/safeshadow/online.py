"""
Online risk accounting. A policy that replans during execution is safe at
all times if, whenever it commits to a plan, the risk it already took plus
the certified risk of the rest of the plan stays below a lifetime contract.
`RiskLedger` keeps that account, `commit_plan` and `replan_online` accept or
reject plans, and `advance` moves risk from the committed future to the
spent past as the robot executes its plan.

The risk of an executed prefix is attributed conservatively: it is the risk
of the whole committed plan minus the risk of its remaining suffix, both
certified under the beliefs held at commitment time.
"""

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence, TypeAlias

import numpy as np
from loguru import logger as logging

from .certification import (
    DEFAULT_EPS_FLOOR,
    ObstacleCert,
    SafetyCertificate,
    SearchSchedule,
    assemble_certificate,
    find_maximal_shadow_set,
)
from .geometry import Polyline
from .numerics import RngStream
from .oracle import McReport, mc_collision_prob
from .pgdf import GaussianFace, PgdfObstacle

LEDGER_TOLERANCE = 1e-12
"""
Absolute slack allowed on `spent + committed_future <= contract_eps`, to
absorb floating point rounding when risk is transferred.
"""

LedgerEventKind: TypeAlias = Literal["commit", "reject", "advance"]


class NotOnTrajectory(ValueError):
    """
    Raised by `advance` and `run_policy` when an executed path is not a prefix
    of the committed trajectory.
    """


@dataclass(frozen=True)
class LedgerEvent:
    """Entry of the ledger history"""

    time: float
    kind: LedgerEventKind

    amount: float
    """
    Proposed total for `commit` and `reject`, transferred risk for
    `advance`
    """

    spent: float
    committed_future: float

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "time": self.time,
            "kind": self.kind,
            "amount": self.amount,
            "spent": self.spent,
            "committed_future": self.committed_future,
        }


@dataclass(frozen=True)
class CommittedPlan:
    """A trajectory, its certificate, and the beliefs it was certified on"""

    volume: Polyline
    certificate: SafetyCertificate
    obstacles: tuple[PgdfObstacle, ...] = field(repr=False)


@dataclass(frozen=True)
class RiskLedger:
    """
    Immutable risk account. Every operation returns a new ledger with one
    more history entry.
    """

    contract_eps: float
    """Lifetime risk budget"""

    spent: float = 0.0
    """Risk attributed to the executed part of the trajectory"""

    committed_future: float = 0.0
    """Certified risk of the remaining part of the committed plan"""

    history: tuple[LedgerEvent, ...] = ()
    plan: CommittedPlan | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not 0 < self.contract_eps <= 1:
            raise ValueError(
                f"Contract must be in (0, 1], got {self.contract_eps}"
            )
        if self.spent < 0 or self.committed_future < 0:
            raise ValueError("Ledger amounts must be non-negative")
        if self.total > self.contract_eps + LEDGER_TOLERANCE:
            raise ValueError(
                f"Ledger total {self.total} exceeds the contract "
                f"{self.contract_eps}"
            )

    @property
    def total(self) -> float:
        """`spent + committed_future`"""
        return self.spent + self.committed_future

    @property
    def headroom(self) -> float:
        """Largest plan risk `commit_plan` would accept"""
        return max(self.contract_eps - self.spent, 0.0)

    def record(
        self, kind: LedgerEventKind, time: float, amount: float
    ) -> "RiskLedger":
        """Returns a copy with one more history entry"""
        event = LedgerEvent(
            time=time,
            kind=kind,
            amount=amount,
            spent=self.spent,
            committed_future=self.committed_future,
        )
        return replace(self, history=self.history + (event,))

    def to_dict(self) -> dict:
        """JSON friendly representation, for audit"""
        return {
            "contract_eps": self.contract_eps,
            "spent": self.spent,
            "committed_future": self.committed_future,
            "history": [e.to_dict() for e in self.history],
        }


@dataclass(frozen=True)
class Rejected:
    """Outcome of a rejected commitment. The ledger is left unchanged."""

    ledger: RiskLedger
    """The previous ledger, with a `reject` history entry"""

    proposed_total: float
    """`spent + cert.total_eps`, which exceeds the contract"""

    contract_eps: float


@dataclass(frozen=True)
class ObservationUpdate:
    """New face posteriors for one obstacle"""

    obstacle_id: str
    faces: tuple[GaussianFace, ...]
    time: float = 0.0

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "id": self.obstacle_id,
            "faces": [f.to_dict() for f in self.faces],
            "time": self.time,
        }


def apply_update(
    obstacles: Sequence[PgdfObstacle], update: ObservationUpdate
) -> tuple[PgdfObstacle, ...]:
    """
    Replaces the face posteriors of one obstacle wholesale. A joint face
    covariance, if any, is dropped along with the old posteriors.

    Raises:
        ValueError: If no obstacle has the update's id, or if the new faces
            do not have the dimension of the scene.
    """
    if update.obstacle_id not in {o.id for o in obstacles}:
        raise ValueError(f"Unknown obstacle '{update.obstacle_id}'")
    result = []
    for o in obstacles:
        if o.id != update.obstacle_id:
            result.append(o)
            continue
        if any(f.dim != o.dim for f in update.faces):
            raise ValueError(
                f"Update of obstacle '{o.id}' does not have dimension {o.dim}"
            )
        result.append(PgdfObstacle(id=o.id, faces=tuple(update.faces)))
    return tuple(result)


def commit_plan(
    ledger: RiskLedger,
    cert: SafetyCertificate,
    volume: Polyline | None = None,
    obstacles: Sequence[PgdfObstacle] = (),
    time: float = 0.0,
) -> RiskLedger | Rejected:
    """
    Commits to a new plan (replacing the current one) iff
    `ledger.spent + cert.total_eps <= ledger.contract_eps`. On success, the
    committed future becomes `cert.total_eps`.

    Args:
        ledger (RiskLedger):
        cert (SafetyCertificate): Certificate of the remaining trajectory
        volume (Polyline | None, optional): The remaining trajectory. Needed
            for later calls to `advance`.
        obstacles (Sequence[PgdfObstacle], optional): Beliefs the
            certificate was computed under. Needed for later calls to
            `advance`.
        time (float, optional): Timestamp of the history entry
    """
    if volume is not None and cert.volume_digest != volume.digest:
        raise ValueError("Certificate was not issued for this volume")
    proposed = ledger.spent + cert.total_eps
    if proposed > ledger.contract_eps:
        logging.warning(
            "Rejected plan: spent {:.6g} + plan {:.6g} > contract {:.6g}",
            ledger.spent,
            cert.total_eps,
            ledger.contract_eps,
        )
        return Rejected(
            ledger=ledger.record("reject", time, proposed),
            proposed_total=proposed,
            contract_eps=ledger.contract_eps,
        )
    plan = (
        None
        if volume is None
        else CommittedPlan(
            volume=volume, certificate=cert, obstacles=tuple(obstacles)
        )
    )
    ledger = replace(ledger, committed_future=cert.total_eps, plan=plan)
    logging.info(
        "Committed plan with risk {:.6g}, ledger total {:.6g} / {:.6g}",
        cert.total_eps,
        ledger.total,
        ledger.contract_eps,
    )
    return ledger.record("commit", time, proposed)


def _is_prefix(executed: Polyline, head: Polyline) -> bool:
    a, b = executed.waypoints, head.waypoints
    return a.shape == b.shape and bool(np.allclose(a, b, atol=1e-9))


def _cap(
    suffix: Sequence[ObstacleCert], committed: Sequence[ObstacleCert]
) -> list[ObstacleCert]:
    """Per obstacle, the suffix result or the committed one if smaller"""
    by_id = {c.obstacle_id: c for c in committed}
    return [
        c if c.eps <= by_id[c.obstacle_id].eps else by_id[c.obstacle_id]
        for c in suffix
    ]


def advance(
    ledger: RiskLedger, executed: Polyline, time: float = 0.0
) -> RiskLedger:
    """
    Moves the risk attributed to an executed prefix of the committed plan
    from `committed_future` to `spent`. The suffix of the plan is certified
    under the beliefs held at commitment (each obstacle's risk capped at its
    committed value, since the committed shadow also misses the suffix), and
    the transferred amount is the committed risk minus the suffix risk. The
    sum `spent + committed_future` does not change.

    - An executed path of length 0 leaves the ledger unchanged.
    - Executing the whole plan transfers all the committed risk.
    - The end of `executed` is looked up on the plan segment matching its
      number of waypoints, so a plan that passes through a point twice is
      split at the right visit.

    Raises:
        ValueError: If the ledger has no committed plan.
        NotOnTrajectory: If `executed` is not a prefix of the plan.
    """
    if ledger.plan is None:
        raise ValueError("Ledger has no committed plan to advance on")
    plan = ledger.plan
    if not np.allclose(
        executed.waypoints[0], plan.volume.waypoints[0], atol=1e-9
    ):
        raise NotOnTrajectory("Executed path does not start on the plan")
    if executed.length == 0:
        return ledger
    try:
        head, tail = plan.volume.split_at(
            executed.waypoints[-1], start=max(len(executed) - 2, 0)
        )
    except ValueError as e:
        raise NotOnTrajectory(str(e)) from e
    if not _is_prefix(executed, head):
        raise NotOnTrajectory("Executed path is not a prefix of the plan")
    cert = plan.certificate
    if tail.length == 0:
        transferred = ledger.committed_future
        ledger = replace(
            ledger,
            spent=ledger.spent + transferred,
            committed_future=0.0,
            plan=None,
        )
        logging.debug("Plan fully executed, transferred {}", transferred)
        return ledger.record("advance", time, transferred)
    suffix = find_maximal_shadow_set(
        plan.obstacles,
        tail,
        cert.eps_precision,
        eps_floor=cert.eps_floor,
    )
    capped = assemble_certificate(
        _cap(suffix.per_obstacle, cert.per_obstacle),
        tail,
        cert.eps_precision,
        cert.eps_floor,
    )
    transferred = max(ledger.committed_future - capped.total_eps, 0.0)
    ledger = replace(
        ledger,
        spent=ledger.spent + transferred,
        committed_future=capped.total_eps,
        plan=CommittedPlan(
            volume=tail, certificate=capped, obstacles=plan.obstacles
        ),
    )
    logging.debug(
        "Advanced by {:.4g} units, transferred risk {:.6g}",
        executed.length,
        transferred,
    )
    return ledger.record("advance", time, transferred)


def replan_online(
    ledger: RiskLedger,
    obstacles: Sequence[PgdfObstacle],
    remaining: Polyline,
    eps_p: float,
    eps_floor: float = DEFAULT_EPS_FLOOR,
    schedule: SearchSchedule = "linear",
    time: float = 0.0,
) -> tuple[SafetyCertificate, RiskLedger | Rejected]:
    """
    Certifies a new remaining trajectory under updated beliefs and commits
    to it iff the risk already spent plus its certified risk is within the
    contract. A rejected replan leaves the current plan active.

    Returns:
        The certificate of `remaining` and the outcome of `commit_plan`.
    """
    cert = find_maximal_shadow_set(
        obstacles, remaining, eps_p, eps_floor=eps_floor, schedule=schedule
    )
    return cert, commit_plan(ledger, cert, remaining, obstacles, time)


@dataclass(frozen=True)
class Stage:
    """
    One step of a scripted policy: when the robot reaches `at`, it receives
    `updates` and proposes `plan` as its new remaining trajectory.
    """

    at: np.ndarray
    updates: tuple[ObservationUpdate, ...] = ()
    plan: Polyline | None = None
    time: float = 0.0


@dataclass(frozen=True)
class OnlineScript:
    """Scripted policy: an initial trajectory, a contract and stages"""

    contract_eps: float
    initial: Polyline
    stages: tuple[Stage, ...] = ()
    eps_p: float = 1e-4
    eps_floor: float = DEFAULT_EPS_FLOOR


@dataclass(frozen=True)
class StageOutcome:
    """What happened at one stage of `run_policy`"""

    index: int
    reached: bool
    proposed_eps: float | None = None
    accepted: bool | None = None

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "index": self.index,
            "reached": self.reached,
            "proposed_eps": self.proposed_eps,
            "accepted": self.accepted,
        }


@dataclass(frozen=True)
class StopPoint:
    """
    World model if execution were cut after some stage: the beliefs held at
    that time, and the path the robot follows (executed prefixes followed by
    the plan committed at that time).
    """

    obstacles: tuple[PgdfObstacle, ...] = field(repr=False)
    path: Polyline = field(repr=False)


@dataclass(frozen=True)
class PolicyTrace:
    """Deterministic execution of an `OnlineScript`"""

    outcomes: tuple[StageOutcome, ...]
    stops: tuple[StopPoint, ...]
    """One per stop time: before the first stage, then after each stage"""

    ledger: RiskLedger | None
    """Final ledger, `None` if the ledger was disabled"""


def _concat(parts: Sequence[Polyline]) -> Polyline:
    """Concatenates polylines whose ends and starts coincide"""
    w = [parts[0].waypoints] + [p.waypoints[1:] for p in parts[1:]]
    return Polyline(np.vstack(w))


def run_policy(
    obstacles: Sequence[PgdfObstacle],
    script: OnlineScript,
    ledger_enabled: bool = True,
) -> PolicyTrace:
    """
    Executes a scripted policy. At each stage that lies on the current plan,
    the robot advances to it, applies the stage's observation updates, and
    proposes the stage's plan if any. With the ledger enabled, proposals go
    through `commit_plan`. With the ledger disabled, a proposal is accepted
    as soon as its own certified risk is within the contract, regardless of
    the risk already taken. Stages that are not on the current plan are
    never reached and are skipped.

    Raises:
        ValueError: If the initial trajectory is not within the contract.
    """
    beliefs = tuple(obstacles)
    cert = find_maximal_shadow_set(
        beliefs, script.initial, script.eps_p, eps_floor=script.eps_floor
    )
    ledger: RiskLedger | Rejected | None = commit_plan(
        RiskLedger(contract_eps=script.contract_eps),
        cert,
        script.initial,
        beliefs,
    )
    if isinstance(ledger, Rejected):
        raise ValueError(
            f"Initial trajectory has risk {cert.total_eps}, above the "
            f"contract {script.contract_eps}"
        )
    if not ledger_enabled:
        ledger = None
    executed: list[Polyline] = []
    current = script.initial
    stops = [StopPoint(obstacles=beliefs, path=current)]
    outcomes = []
    for k, stage in enumerate(script.stages):
        with logging.contextualize(stage=k):
            try:
                head, tail = current.split_at(stage.at)
            except ValueError:
                logging.info("Stage not reached, skipping")
                outcomes.append(StageOutcome(index=k, reached=False))
                stops.append(stops[-1])
                continue
            executed.append(head)
            current = tail
            if ledger is not None:
                ledger = advance(ledger, head, stage.time)
            for u in stage.updates:
                beliefs = apply_update(beliefs, u)
            outcome = StageOutcome(index=k, reached=True)
            if stage.plan is not None:
                if ledger is not None:
                    cert, result = replan_online(
                        ledger,
                        beliefs,
                        stage.plan,
                        script.eps_p,
                        eps_floor=script.eps_floor,
                        time=stage.time,
                    )
                    accepted = not isinstance(result, Rejected)
                    ledger = result if accepted else result.ledger
                else:
                    cert = find_maximal_shadow_set(
                        beliefs,
                        stage.plan,
                        script.eps_p,
                        eps_floor=script.eps_floor,
                    )
                    accepted = cert.total_eps <= script.contract_eps
                if accepted:
                    current = stage.plan
                outcome = StageOutcome(
                    index=k,
                    reached=True,
                    proposed_eps=cert.total_eps,
                    accepted=accepted,
                )
                logging.info(
                    "Proposed plan with risk {:.6g}: {}",
                    cert.total_eps,
                    "accepted" if accepted else "rejected",
                )
            outcomes.append(outcome)
            path = _concat(executed + [current])
            stops.append(StopPoint(obstacles=beliefs, path=path))
    return PolicyTrace(
        outcomes=tuple(outcomes),
        stops=tuple(stops),
        ledger=ledger if isinstance(ledger, RiskLedger) else None,
    )


@dataclass(frozen=True)
class PolicyReport:
    """Monte-Carlo failure frequencies of a scripted policy"""

    trace: PolicyTrace
    stop_reports: tuple[McReport, ...]
    """Collision frequency for each stop time of the trace"""

    ledger_enabled: bool

    @property
    def worst(self) -> McReport:
        """Stop time with the highest failure frequency"""
        return max(self.stop_reports, key=lambda r: r.p_hat)

    @property
    def overall(self) -> McReport:
        """Policy run to completion (the last stop time)"""
        return self.stop_reports[-1]

    def to_dict(self) -> dict:
        """JSON friendly representation"""
        return {
            "ledger_enabled": self.ledger_enabled,
            "stages": [o.to_dict() for o in self.trace.outcomes],
            "stop_times": [r.to_dict() for r in self.stop_reports],
            "ledger": (
                None
                if self.trace.ledger is None
                else self.trace.ledger.to_dict()
            ),
        }


def simulate_policy(
    obstacles: Sequence[PgdfObstacle],
    script: OnlineScript,
    trials: int,
    rng: RngStream,
    ledger_enabled: bool = True,
    n_jobs: int = 1,
) -> PolicyReport:
    """
    Runs the policy (see `run_policy`) and estimates, for every stop time,
    the probability that the path followed by a robot whose observation
    stream is cut at that time collides with a world drawn from the beliefs
    held at that time. Each stop time uses its own spawned stream.
    """
    trace = run_policy(obstacles, script, ledger_enabled)
    streams = rng.spawn(len(trace.stops))
    reports = tuple(
        mc_collision_prob(s.obstacles, s.path, trials, r, n_jobs=n_jobs)
        for s, r in zip(trace.stops, streams)
    )
    report = PolicyReport(
        trace=trace, stop_reports=reports, ledger_enabled=ledger_enabled
    )
    logging.info(
        "Worst stop time failure frequency {:.4g} (+- {:.2g}), contract {}",
        report.worst.p_hat,
        report.worst.stderr,
        script.contract_eps,
    )
    return report
