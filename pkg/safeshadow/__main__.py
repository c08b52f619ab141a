"""CLI module"""

import os
import sys
from pathlib import Path
from typing import NoReturn

import click
from loguru import logger as logging

EXIT_GATE_FAILED = 1
EXIT_INPUT_ERROR = 2


def _input_error(message: str) -> NoReturn:
    click.echo(f"Error: {message}", err=True)
    sys.exit(EXIT_INPUT_ERROR)


def _load(scene: str, *sections: str):  # type: ignore
    """Loads a scene, exits with code 2 if it is invalid or incomplete"""
    from .scene import SceneError, load_scene

    try:
        s = load_scene(scene)
    except SceneError as e:
        _input_error(str(e))
    for section in sections:
        if getattr(s, section) is None:
            _input_error(f"Scene '{s.name}' has no '{section}' section")
    return s


def _echo_certificate(cert) -> None:  # type: ignore
    click.echo(f"{'obstacle':<16} {'eps':>12} {'status':<17} calls")
    for c in cert.per_obstacle:
        click.echo(
            f"{c.obstacle_id:<16} {c.eps:>12.6g} {c.status:<17} {c.n_calls}"
        )
    click.echo(f"total ({cert.allocation}): {cert.total_eps:.6g}")


@click.group()
@click.option(  # --logging-level
    "--logging-level",
    default=os.getenv("LOGGING_LEVEL", "info"),
    help=(
        "Logging level, case insensitive. Defaults to 'info'. Can also be set "
        "using the LOGGING_LEVEL environment variable."
    ),
    type=click.Choice(
        ["critical", "debug", "error", "info", "warning"],
        case_sensitive=False,
    ),
)
@logging.catch
def main(logging_level: str) -> None:
    """safeshadow CLI"""
    from .logging import setup_logging

    setup_logging(logging_level)


@main.command()
@click.argument("scene", type=str)
@click.option(  # --eps-precision
    "-p",
    "--eps-precision",
    default=1e-4,
    help=(
        "Total precision of the risk search. Each of the n obstacles is "
        "searched with precision eps_precision / n. Defaults to 1e-4."
    ),
    type=float,
)
@click.option(  # --eps-floor
    "--eps-floor",
    default=1e-9,
    help="Smallest risk ever tested. Defaults to 1e-9.",
    type=float,
)
@click.option(  # --schedule
    "--schedule",
    default="linear",
    help="Search schedule, 'linear' (the default) or 'log'.",
    type=click.Choice(["linear", "log"]),
)
@click.option(  # --uniform-allocation
    "--uniform-allocation",
    help="Give every obstacle the same risk instead of its own optimum.",
    is_flag=True,
)
@click.option(  # --max-risk
    "--max-risk",
    default=None,
    help=(
        "If set, exits with code 1 when the certified total risk exceeds "
        "this value."
    ),
    type=float,
)
@click.option(  # --n-jobs
    "-j",
    "--n-jobs",
    default=None,
    help=(
        "Number of parallel workers. Defaults to a reasonable number for "
        "this machine. The output does not depend on it."
    ),
    type=int,
)
@click.option(  # --output
    "-o",
    "--output",
    default=None,
    help="Where to write the certificate (JSON).",
    type=click.Path(dir_okay=False, path_type=Path),  # type: ignore
)
def certify(
    eps_floor: float,
    eps_precision: float,
    max_risk: float | None,
    n_jobs: int | None,
    output: Path | None,
    scene: str,
    schedule: str,
    uniform_allocation: bool,
) -> None:
    """Certifies the trajectory of a scene"""
    from .certification import (
        find_maximal_shadow_set,
        find_uniform_shadow_set,
        save_certificate,
    )
    from .utils import get_reasonable_n_jobs

    s = _load(scene, "trajectory")
    search = (
        find_uniform_shadow_set
        if uniform_allocation
        else find_maximal_shadow_set
    )
    cert = search(
        s.obstacles,
        s.trajectory,
        eps_precision,
        eps_floor=eps_floor,
        schedule=schedule,  # type: ignore
        n_jobs=n_jobs or get_reasonable_n_jobs(),
    )
    _echo_certificate(cert)
    if output is not None:
        save_certificate(cert, output, scene=s.name, command="certify")
    if max_risk is not None and cert.total_eps > max_risk:
        click.echo(f"FAILED: total risk exceeds {max_risk}")
        sys.exit(EXIT_GATE_FAILED)


@main.command()
@click.argument("scene", type=str)
@click.option(  # --seed
    "--seed",
    default=0,
    help="Seed of the planner's random stream. Defaults to 0.",
    type=int,
)
@click.option(  # --output
    "-o",
    "--output",
    default=None,
    help="Where to write the path, tree and certificate (JSON).",
    type=click.Path(dir_okay=False, path_type=Path),  # type: ignore
)
def plan(output: Path | None, scene: str, seed: int) -> None:
    """Plans a certified path with the scene's planner configuration"""
    import turbo_broccoli as tb

    from .numerics import RngStream
    from .planning import StartNotCertifiable
    from .planning import plan as _plan

    s = _load(scene, "planner")
    try:
        result = _plan(s.obstacles, s.planner, RngStream(seed))
    except StartNotCertifiable as e:
        _input_error(str(e))
    if output is not None:
        document = result.to_dict()
        document["__meta__"] = {"scene": s.name, "seed": seed}
        tb.save_json(document, output)
    if result.path is None:
        click.echo(f"NOT FOUND after {result.iterations} iterations")
        sys.exit(EXIT_GATE_FAILED)
    for w in result.path.waypoints:
        click.echo(" ".join(f"{x:.6g}" for x in w))
    click.echo(
        f"risk: {result.certificate.total_eps:.6g} "  # type: ignore
        f"(recertified {result.recertification.total_eps:.6g})"  # type: ignore
    )


@main.command()
@click.argument("scene", type=str)
@click.option(  # --trials
    "-n",
    "--trials",
    default=10_000,
    help="Monte-Carlo trials per stop time. Defaults to 10000.",
    type=int,
)
@click.option(  # --seed
    "--seed",
    default=0,
    help="Seed of the Monte-Carlo streams. Defaults to 0.",
    type=int,
)
@click.option(  # --disable-ledger
    "--disable-ledger",
    help=(
        "Accept any replan whose own risk is within the contract, ignoring "
        "the risk already taken."
    ),
    is_flag=True,
)
@click.option(  # --n-jobs
    "-j",
    "--n-jobs",
    default=None,
    help=(
        "Number of parallel workers. Defaults to a reasonable number for "
        "this machine. The output does not depend on it."
    ),
    type=int,
)
@click.option(  # --output
    "-o",
    "--output",
    default=None,
    help="Where to write the report and ledger history (JSON).",
    type=click.Path(dir_okay=False, path_type=Path),  # type: ignore
)
def simulate_online(
    disable_ledger: bool,
    n_jobs: int | None,
    output: Path | None,
    scene: str,
    seed: int,
    trials: int,
) -> None:
    """
    Runs the scene's online script and estimates the failure frequency at
    every stop time. Exits with code 1 if some stop time exceeds the contract
    by more than 3 standard errors.
    """
    import turbo_broccoli as tb

    from .numerics import RngStream
    from .online import simulate_policy
    from .utils import get_reasonable_n_jobs

    s = _load(scene, "online")
    report = simulate_policy(
        s.obstacles,
        s.online,
        trials,
        RngStream(seed),
        ledger_enabled=not disable_ledger,
        n_jobs=n_jobs or get_reasonable_n_jobs(),
    )
    for o in report.trace.outcomes:
        if not o.reached:
            click.echo(f"stage {o.index}: not reached")
        elif o.proposed_eps is None:
            click.echo(f"stage {o.index}: no proposal")
        else:
            decision = "accepted" if o.accepted else "rejected"
            click.echo(
                f"stage {o.index}: proposed {o.proposed_eps:.6g}, {decision}"
            )
    contract = s.online.contract_eps
    violated = False
    for k, r in enumerate(report.stop_reports):
        click.echo(
            f"stop {k}: failure {r.p_hat:.4g} +- {r.stderr:.2g} "
            f"(upper {r.upper_ci:.4g})"
        )
        violated |= r.p_hat > contract + 3 * r.stderr
    if output is not None:
        document = report.to_dict()
        document["__meta__"] = {"scene": s.name, "seed": seed}
        tb.save_json(document, output)
    if violated:
        click.echo(f"FAILED: some stop time exceeds the contract {contract}")
        sys.exit(EXIT_GATE_FAILED)


@main.command()
@click.argument("scene", type=str)
@click.argument(
    "output", type=click.Path(dir_okay=False, path_type=Path)  # type: ignore
)
@click.option(  # --eps
    "-e",
    "--eps",
    multiple=True,
    help="Risk of a shadow family to outline. Can be repeated.",
    type=float,
)
@click.option(  # --certificate
    "-c",
    "--certificate",
    default=None,
    help="Certificate whose shadows are outlined.",
    type=click.Path(
        exists=True, dir_okay=False, path_type=Path
    ),  # type: ignore
)
@click.option(  # --plan
    "--plan",
    "plan_file",
    default=None,
    help="Output of the plan command, whose path and tree are drawn.",
    type=click.Path(
        exists=True, dir_okay=False, path_type=Path
    ),  # type: ignore
)
@click.option(  # --resolution
    "-r",
    "--resolution",
    default=200,
    help="Grid resolution of the shadow outlines. Defaults to 200.",
    type=int,
)
def render(
    certificate: Path | None,
    eps: tuple[float, ...],
    output: Path,
    plan_file: Path | None,
    resolution: int,
    scene: str,
) -> None:
    """Renders a planar scene to SVG"""
    import numpy as np
    import turbo_broccoli as tb

    from .certification import load_certificate
    from .geometry import Polyline
    from .plotting import render_scene

    s = _load(scene)
    if s.dimension != 2:
        _input_error("Only planar scenes can be rendered")
    if any(not 0 < e < 1 for e in eps):
        _input_error("Shadow risks must be in (0, 1)")
    cert, trajectory, edges = None, s.trajectory, []
    if certificate is not None:
        try:
            cert = load_certificate(certificate)
        except (KeyError, ValueError) as e:
            _input_error(f"Invalid certificate: {e}")
    if plan_file is not None:
        try:
            document = tb.load_json(plan_file)
            nodes = np.array(document["tree"]["nodes"], dtype=float)
            edges = [
                (nodes[i], nodes[j]) for i, j in document["tree"]["edges"]
            ]
            if document["path"] is not None:
                trajectory = Polyline(document["path"]["waypoints"])
        except (IndexError, KeyError, TypeError, ValueError) as e:
            _input_error(f"Invalid plan: {e}")
    render_scene(
        s.obstacles,
        output,
        eps=eps,
        certificate=cert,
        trajectory=trajectory,
        tree_edges=edges,
        window=s.window,
        resolution=resolution,
    )


@main.command()
@click.argument("scene", type=str)
@click.argument(
    "certificate",
    type=click.Path(
        exists=True, dir_okay=False, path_type=Path
    ),  # type: ignore
)
@click.option(  # --trials
    "-n",
    "--trials",
    default=100_000,
    help="Number of Monte-Carlo trials. Defaults to 100000.",
    type=int,
)
@click.option(  # --seed
    "--seed",
    default=0,
    help="Seed of the Monte-Carlo streams. Defaults to 0.",
    type=int,
)
@click.option(  # --n-jobs
    "-j",
    "--n-jobs",
    default=None,
    help=(
        "Number of parallel workers. Defaults to a reasonable number for "
        "this machine. The output does not depend on it."
    ),
    type=int,
)
def mc_validate(
    certificate: Path,
    n_jobs: int | None,
    scene: str,
    seed: int,
    trials: int,
) -> None:
    """
    Checks a certificate against the scene (see
    `safeshadow.certification.verify_certificate`) and against a Monte-Carlo
    estimate of the collision probability of the scene's trajectory. Exits
    with code 1 if the check fails or if the estimate exceeds the certified
    total by more than 3 standard errors.
    """
    from .certification import (
        DigestMismatch,
        load_certificate,
        verify_certificate,
    )
    from .numerics import RngStream
    from .oracle import mc_collision_prob
    from .utils import get_reasonable_n_jobs

    s = _load(scene, "trajectory")
    try:
        cert = load_certificate(certificate)
    except (KeyError, ValueError) as e:
        _input_error(f"Invalid certificate: {e}")
    try:
        valid = verify_certificate(cert, s.obstacles, s.trajectory)
    except DigestMismatch as e:
        _input_error(str(e))
    click.echo(f"certificate check: {'valid' if valid else 'invalid'}")
    report = mc_collision_prob(
        s.obstacles,
        s.trajectory,
        trials,
        RngStream(seed),
        n_jobs=n_jobs or get_reasonable_n_jobs(),
        tqdm_style="console",
    )
    click.echo(
        f"p_hat {report.p_hat:.4g} +- {report.stderr:.2g} "
        f"(upper {report.upper_ci:.4g}), certified {cert.total_eps:.6g}"
    )
    if not valid:
        click.echo("FAILED: certificate check")
        sys.exit(EXIT_GATE_FAILED)
    if report.p_hat > cert.total_eps + 3 * report.stderr:
        click.echo("FAILED: collision frequency exceeds the certificate")
        sys.exit(EXIT_GATE_FAILED)
    click.echo("PASSED")


@main.command()
@click.argument("scene", type=str)
@click.argument(
    "output", type=click.Path(dir_okay=False, path_type=Path)  # type: ignore
)
def fit(output: Path, scene: str) -> None:
    """Fits obstacles from the point clouds of a scene"""
    from .scene import dump_scene, fit_scene

    s = _load(scene)
    if not s.point_clouds:
        _input_error(f"Scene '{s.name}' has no point cloud")
    dump_scene(fit_scene(s), output)


if __name__ == "__main__":
    main()
