import numpy as np
import pytest

from safeshadow.geometry import Polyline
from safeshadow.numerics import RngStream
from safeshadow.oracle import (
    mc_collision_prob,
    mc_containment,
    sample_world,
    volume_hits,
)
from safeshadow.pgdf import GaussianFace, PgdfObstacle

PHI_MINUS_2 = 0.022750131948179195


def test_no_obstacle(horizontal):
    report = mc_collision_prob([], horizontal, 100, RngStream(0))
    assert report.hits == 0 and report.p_hat == 0.0
    assert report.upper_ci == pytest.approx(1 - 0.001 ** (1 / 100))


def test_validation(gate, horizontal):
    with pytest.raises(ValueError):
        mc_collision_prob([gate], horizontal, 0, RngStream(0))
    with pytest.raises(ValueError):
        mc_containment(gate, 0.1, 0, RngStream(0))
    with pytest.raises(ValueError):
        mc_containment(gate, 1.0, 10, RngStream(0))
    with pytest.raises(ValueError):
        sample_world([gate], RngStream(0), 10, "other")  # type: ignore


def test_gate_collision_probability(gate, horizontal):
    report = mc_collision_prob([gate], horizontal, 40_000, RngStream(0))
    assert abs(report.p_hat - PHI_MINUS_2) <= 4 * report.stderr
    assert report.upper_ci >= report.p_hat
    assert report.seed == 0
    assert report.to_dict()["trials"] == 40_000


def test_result_does_not_depend_on_n_jobs(gate, horizontal):
    kw = {"trials": 25_000, "chunk_size": 5_000}
    serial = mc_collision_prob([gate], horizontal, rng=RngStream(3), **kw)
    parallel = mc_collision_prob(
        [gate], horizontal, rng=RngStream(3), n_jobs=2, **kw
    )
    again = mc_collision_prob([gate], horizontal, rng=RngStream(3), **kw)
    assert serial == parallel == again


def test_rigid_obstacle_on_the_path(make_box, horizontal):
    rigid = make_box("rigid", (-1.0, -1.0), (1.0, 1.0), offset_var=0.0)
    report = mc_collision_prob([rigid], horizontal, 1000, RngStream(0))
    assert report.p_hat == 1.0 and report.upper_ci == 1.0


def test_comonotone_world_shares_draws(gate):
    other = PgdfObstacle(id="other", faces=gate.faces)
    a, b = sample_world([gate, other], RngStream(0), 100, "comonotone")
    np.testing.assert_array_equal(a, b)
    a, b = sample_world([gate, other], RngStream(0), 100, "independent")
    assert not np.array_equal(a, b)


def test_volume_hits(make_box):
    rigid = make_box("rigid", (-1.0, -1.0), (1.0, 1.0), offset_var=0.0)
    worlds = [np.broadcast_to(rigid.mean_faces, (2, 4, 3))]
    vol = Polyline([[-3.0, 0.0], [3.0, 0.0]])
    assert volume_hits(worlds, vol).tolist() == [True, True]
    assert volume_hits([], vol).shape == (0,)


def _full_rank_faces(mus: list) -> tuple[GaussianFace, ...]:
    return tuple(GaussianFace(np.array(mu), 0.01 * np.eye(3)) for mu in mus)


@pytest.mark.slow
@pytest.mark.parametrize(
    "faces",
    [
        _full_rank_faces([(0.0, -1.0, 1.0)]),
        _full_rank_faces(
            [(1.0, 0.0, -1.0), (-1.0, 0.0, -1.0), (0.0, 1.0, -3.0)]
        ),
        _full_rank_faces(
            [
                (1.0, 0.0, -1.0),
                (-1.0, 0.0, -1.0),
                (0.0, 1.0, -3.0),
                (0.0, -1.0, 1.0),
            ]
        ),
    ],
)
@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1])
def test_containment_frequency(faces, eps):
    o = PgdfObstacle(id="o", faces=faces)
    report = mc_containment(o, eps, 100_000, RngStream(5))
    assert report.p_hat >= 1 - eps - 3 * np.sqrt(eps * (1 - eps) / 100_000)


def test_containment_single_deterministic_normal(gate):
    # only the offset is uncertain: containment is exactly 1 - P(chi2_1 > q)
    report = mc_containment(gate, 0.1, 20_000, RngStream(6))
    assert report.p_hat >= 0.9
