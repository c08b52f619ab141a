from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeshadow.certification import SafetyCertificate, find_maximal_shadow_set
from safeshadow.geometry import Polyline
from safeshadow.numerics import RngStream
from safeshadow.online import (
    LEDGER_TOLERANCE,
    NotOnTrajectory,
    ObservationUpdate,
    OnlineScript,
    Rejected,
    RiskLedger,
    Stage,
    advance,
    apply_update,
    commit_plan,
    replan_online,
    run_policy,
    simulate_policy,
)
from safeshadow.pgdf import GaussianFace, PgdfObstacle
from safeshadow.scene import load_scene

LINE = Polyline([[0.0, 0.0], [1.0, 0.0]])

GATE = PgdfObstacle(
    id="gate",
    faces=(
        GaussianFace(np.array([0.0, -1.0, 1.0]), np.diag([0.0, 0.0, 0.25])),
    ),
)
"""`{y >= c}` with `c ~ N(1, 0.5^2)`"""

LEDGER_OPS = st.lists(
    st.one_of(
        st.tuples(st.just("commit"), st.floats(0.0, 0.5)),
        st.tuples(st.just("replan"), st.floats(-1.0, 0.5)),
        st.tuples(st.just("advance"), st.sampled_from([0.25, 0.5, 1.0])),
    ),
    max_size=20,
)
"""
Ledger operations: commit a plan of given risk, replan along `y = c` past
`GATE`, or advance along a fraction of the current plan
"""


def _cert(total: float, vol: Polyline = LINE) -> SafetyCertificate:
    """Certificate with a prescribed total and no obstacle"""
    return SafetyCertificate(
        per_obstacle=(),
        total_eps=total,
        volume_digest=vol.digest,
        eps_precision=1e-4,
        eps_floor=1e-9,
    )


def _widened(faces, var: float) -> tuple[GaussianFace, ...]:
    return tuple(
        GaussianFace(f.mu, np.diag([0.0, 0.0, var])) for f in faces
    )


def test_ledger_validation():
    with pytest.raises(ValueError):
        RiskLedger(contract_eps=0.0)
    with pytest.raises(ValueError):
        RiskLedger(contract_eps=1.5)
    with pytest.raises(ValueError):
        RiskLedger(contract_eps=0.3, spent=-0.1)
    with pytest.raises(ValueError):
        RiskLedger(contract_eps=0.3, spent=0.2, committed_future=0.2)
    ledger = RiskLedger(contract_eps=0.3, spent=0.1)
    assert ledger.headroom == pytest.approx(0.2)


def test_commit_accepted():
    result = commit_plan(RiskLedger(contract_eps=0.005), _cert(0.0026))
    assert isinstance(result, RiskLedger)
    assert result.committed_future == 0.0026
    assert result.spent == 0.0
    assert result.plan is None
    assert result.history[-1].kind == "commit"
    assert result.history[-1].amount == 0.0026


def test_commit_zero_risk():
    result = commit_plan(RiskLedger(contract_eps=0.005), _cert(0.0), LINE)
    assert isinstance(result, RiskLedger)
    assert result.plan is not None and result.plan.volume is LINE


def test_commit_rejected():
    ledger = RiskLedger(contract_eps=0.3, spent=0.2, committed_future=0.1)
    result = commit_plan(ledger, _cert(0.3))
    assert isinstance(result, Rejected)
    assert result.proposed_total == pytest.approx(0.5)
    assert result.contract_eps == 0.3
    assert result.ledger.spent == 0.2
    assert result.ledger.committed_future == 0.1
    assert result.ledger.history[-1].kind == "reject"


def test_commit_checks_the_volume():
    other = Polyline([[0.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        commit_plan(RiskLedger(contract_eps=0.3), _cert(0.1), other)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.5), max_size=20))
def test_ledger_invariant(totals):
    ledger = RiskLedger(contract_eps=0.3)
    for t in totals:
        result = commit_plan(ledger, _cert(t), LINE)
        if isinstance(result, Rejected):
            assert result.proposed_total > ledger.contract_eps
            ledger = result.ledger
            continue
        ledger = advance(result, LINE)
        assert ledger.committed_future == 0.0 and ledger.plan is None
        assert ledger.total <= ledger.contract_eps + LEDGER_TOLERANCE
    assert ledger.spent == pytest.approx(
        sum(
            e.amount
            for e in ledger.history
            if e.kind == "advance"
        )
    )


@pytest.mark.slow
@settings(max_examples=300, deadline=None)
@given(LEDGER_OPS)
def test_ledger_invariant_with_replans(ops):
    ledger = RiskLedger(contract_eps=0.3)
    for kind, x in ops:
        before = ledger
        if kind == "advance":
            if ledger.plan is None:
                continue
            w = ledger.plan.volume.waypoints
            executed = Polyline([w[0], (1 - x) * w[0] + x * w[-1]])
            ledger = advance(ledger, executed)
            assert ledger.total == pytest.approx(
                before.total, abs=LEDGER_TOLERANCE
            )
            assert ledger.committed_future <= before.committed_future
        else:
            if kind == "commit":
                result = commit_plan(ledger, _cert(x), LINE)
            else:
                vol = Polyline([[-3.0, x], [3.0, x]])
                _, result = replan_online(ledger, [GATE], vol, 1e-4)
            if isinstance(result, Rejected):
                assert result.proposed_total > ledger.contract_eps
                ledger = result.ledger
                assert ledger.plan is before.plan
                assert ledger.spent == before.spent
                assert ledger.committed_future == before.committed_future
            else:
                ledger = result
        assert ledger.spent >= before.spent
        assert ledger.total <= ledger.contract_eps + LEDGER_TOLERANCE
    transferred = [e.amount for e in ledger.history if e.kind == "advance"]
    assert ledger.spent == pytest.approx(sum(transferred), abs=1e-12)


def test_advance_transfers_the_executed_risk(make_box, horizontal):
    box = make_box("box", (-3.5, 0.5), (-2.5, 2.5))
    cert = find_maximal_shadow_set([box], horizontal, 1e-6)
    assert cert.per_obstacle[0].status == "CERTIFIED"
    ledger = commit_plan(
        RiskLedger(contract_eps=0.01), cert, horizontal, [box]
    )
    assert isinstance(ledger, RiskLedger)
    moved = advance(ledger, Polyline([[-3.0, 0.0], [0.0, 0.0]]), time=1.0)
    # the rest of the plan is far from the box
    assert moved.committed_future == 1e-9
    assert moved.spent == pytest.approx(cert.total_eps - 1e-9)
    assert moved.total == pytest.approx(ledger.total, abs=1e-15)
    assert moved.plan is not None
    np.testing.assert_array_equal(
        moved.plan.volume.waypoints, [[0.0, 0.0], [3.0, 0.0]]
    )
    done = advance(moved, moved.plan.volume, time=2.0)
    assert done.committed_future == 0.0
    assert done.spent == pytest.approx(cert.total_eps)
    assert [e.kind for e in done.history] == ["commit", "advance", "advance"]


def test_advance_errors(horizontal):
    with pytest.raises(ValueError):
        advance(RiskLedger(contract_eps=0.3), horizontal)
    cert = _cert(0.1, horizontal)
    ledger = commit_plan(RiskLedger(contract_eps=0.3), cert, horizontal)
    assert isinstance(ledger, RiskLedger)
    with pytest.raises(NotOnTrajectory):
        advance(ledger, Polyline([[-2.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(NotOnTrajectory):
        advance(ledger, Polyline([[-3.0, 0.0], [0.0, 1.0]]))
    assert advance(ledger, Polyline([-3.0, 0.0])) is ledger


def test_advance_on_a_plan_through_a_point_twice():
    plan = Polyline([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    ledger = commit_plan(
        RiskLedger(contract_eps=0.3), _cert(0.1, plan), plan
    )
    assert isinstance(ledger, RiskLedger)
    moved = advance(ledger, Polyline([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]))
    assert moved.plan is not None
    np.testing.assert_array_equal(
        moved.plan.volume.waypoints, [[1.0, 0.0], [1.0, 1.0]]
    )
    assert moved.spent == 0.1 and moved.committed_future == 0.0
    moved = advance(ledger, Polyline([[0.0, 0.0], [1.0, 0.0]]))
    assert moved.plan is not None and len(moved.plan.volume) == 4


def test_apply_update(gate):
    faces = _widened(gate.faces, 1.0)
    (updated,) = apply_update([gate], ObservationUpdate("gate", faces))
    assert updated.id == "gate"
    assert updated.faces[0].sigma[2, 2] == 1.0
    with pytest.raises(ValueError):
        apply_update([gate], ObservationUpdate("other", faces))
    cube_face = GaussianFace(np.zeros(4), np.eye(4))
    with pytest.raises(ValueError):
        apply_update([gate], ObservationUpdate("gate", (cube_face,)))


def test_replan_online_rejects_a_riskier_plan(shortcut):
    script = shortcut.online
    assert script is not None
    cert = find_maximal_shadow_set(shortcut.obstacles, script.initial, 1e-4)
    ledger = commit_plan(
        RiskLedger(contract_eps=script.contract_eps),
        cert,
        script.initial,
        shortcut.obstacles,
    )
    assert isinstance(ledger, RiskLedger)
    stage = script.stages[0]
    head, _ = script.initial.split_at(stage.at)
    ledger = advance(ledger, head, stage.time)
    assert ledger.total <= script.contract_eps

    # more uncertain about B than before
    b = next(o for o in shortcut.obstacles if o.id == "B")
    update = ObservationUpdate("B", _widened(b.faces, 0.36), stage.time)
    beliefs = apply_update(shortcut.obstacles, update)
    assert stage.plan is not None
    new_cert, result = replan_online(ledger, beliefs, stage.plan, 1e-4)
    assert new_cert.total_eps > script.contract_eps
    assert isinstance(result, Rejected)
    assert result.ledger.plan is ledger.plan

    # more certain about B
    beliefs = apply_update(shortcut.obstacles, stage.updates[0])
    new_cert, result = replan_online(ledger, beliefs, stage.plan, 1e-4)
    assert isinstance(result, RiskLedger)
    assert result.plan is not None and result.plan.volume is stage.plan
    assert result.total <= script.contract_eps


def test_run_policy(shortcut):
    script = shortcut.online
    assert script is not None
    trace = run_policy(shortcut.obstacles, script)
    first, second = trace.outcomes
    assert first.reached and first.accepted
    assert second.reached and second.proposed_eps is None
    assert len(trace.stops) == 3
    np.testing.assert_allclose(
        trace.stops[-1].path.waypoints,
        [[-6.0, 0.0], [-5.0, -1.5], [-1.5, -0.1], [1.5, -0.1], [6.0, 0.0]],
    )
    b = next(o for o in trace.stops[-1].obstacles if o.id == "B")
    assert b.faces[0].sigma[2, 2] == 0.0025
    assert trace.ledger is not None
    assert trace.ledger.total <= script.contract_eps + LEDGER_TOLERANCE


def test_run_policy_without_ledger(shortcut):
    assert shortcut.online is not None
    trace = run_policy(
        shortcut.obstacles, shortcut.online, ledger_enabled=False
    )
    assert trace.ledger is None
    assert trace.outcomes[0].accepted


def test_run_policy_skips_unreached_stages(shortcut):
    assert shortcut.online is not None
    script = replace(
        shortcut.online, stages=(Stage(at=np.array([0.0, 5.0])),)
    )
    trace = run_policy(shortcut.obstacles, script)
    assert not trace.outcomes[0].reached
    assert trace.stops[1] is trace.stops[0]


def test_run_policy_initial_over_contract(shortcut):
    assert shortcut.online is not None
    script = replace(shortcut.online, contract_eps=1e-12)
    with pytest.raises(ValueError):
        run_policy(shortcut.obstacles, script)


def test_ledger_to_dict(shortcut):
    assert shortcut.online is not None
    trace = run_policy(shortcut.obstacles, shortcut.online)
    assert trace.ledger is not None
    d = trace.ledger.to_dict()
    assert d["contract_eps"] == 0.05
    assert [e["kind"] for e in d["history"]] == [
        "commit",
        "advance",
        "commit",
        "advance",
    ]


@pytest.mark.slow
def test_simulate_policy_shortcut(shortcut):
    assert shortcut.online is not None
    report = simulate_policy(
        shortcut.obstacles, shortcut.online, 20_000, RngStream(0)
    )
    assert len(report.stop_reports) == 3
    for r in report.stop_reports:
        assert r.p_hat <= shortcut.online.contract_eps + 3 * r.stderr
    assert report.to_dict()["ledger_enabled"]


@pytest.mark.slow
def test_greedy_replans_ledger_matters():
    scene = load_scene("PRESET:greedy_replans")
    script = scene.online
    assert script is not None
    trials = 2_000

    unchecked = simulate_policy(
        scene.obstacles, script, trials, RngStream(0), ledger_enabled=False
    )
    worst = unchecked.worst
    assert worst.p_hat > script.contract_eps + 5 * worst.stderr

    checked = simulate_policy(
        scene.obstacles, script, trials, RngStream(0), ledger_enabled=True
    )
    assert checked.trace.outcomes[0].accepted is False
    for r in checked.stop_reports:
        assert r.p_hat <= script.contract_eps + 3 * r.stderr
