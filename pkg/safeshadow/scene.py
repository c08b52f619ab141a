"""
Scene files: obstacles (or point clouds to fit them from), a trajectory, a
planner configuration and an online script, in a single JSON document.

Example:

    ```json
    {
        "dimension": 2,
        "obstacles": [
            {
                "id": "A",
                "faces": [
                    {"mu": [0, -1, 1], "sigma": [0, 0, 0, 0, 0, 0, 0, 0, 0.01]}
                ]
            }
        ],
        "trajectory": {"waypoints": [[-3, 0], [3, 0]]}
    }
    ```

Covariances are flat row-major lists of exactly `(d + 1)^2` numbers. Other
optional top-level keys are `point_clouds`, `planner`, `online` and
`window`, see `load_scene`.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, TypeVar

import numpy as np
import turbo_broccoli as tb
from loguru import logger as logging

from .geometry import SUPPORTED_DIMENSIONS, Box, Polyline
from .online import ObservationUpdate, OnlineScript, Stage
from .pgdf import FacePointCloud, GaussianFace, PgdfObstacle, fit_obstacle
from .planning import PlannerConfig

SCENES_DIR = Path(__file__).parent / "scenes"

SCENE_PRESETS: dict[str, str] = {
    "box_two_exits": "box_two_exits.json",
    "distant": "distant.json",
    "fit_example": "fit_example.json",
    "greedy_replans": "greedy_replans.json",
    "near_far": "near_far.json",
    "shortcut": "shortcut.json",
    "three_obstacles": "three_obstacles.json",
}
"""
Bundled scenes. `load_scene("PRESET:near_far")` loads
`safeshadow/scenes/near_far.json`.
"""

T = TypeVar("T")


class SceneError(ValueError):
    """
    Raised by `load_scene` when a scene document is invalid. The message
    starts with the dotted path to the offending field, e.g.
    `obstacles[1].faces[0].sigma`.
    """

    field_path: str

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


@dataclass(frozen=True, eq=False)
class Scene:
    """A validated scene"""

    dimension: int
    obstacles: tuple[PgdfObstacle, ...] = ()
    trajectory: Polyline | None = None
    planner: PlannerConfig | None = None
    online: OnlineScript | None = None
    """The initial trajectory of the script is `trajectory`"""

    point_clouds: dict[str, list[FacePointCloud]] = field(
        default_factory=dict, repr=False
    )
    """Per obstacle id, face point clouds to be fitted (see `fit_scene`)"""

    window: Box | None = None
    """Rendering window"""

    name: str = ""


def _at(d: Any, key: str | int, path: str) -> tuple[Any, str]:
    """Value at `d[key]` and its dotted path"""
    p = f"{path}[{key}]" if isinstance(key, int) else f"{path}.{key}"
    p = p.lstrip(".")
    try:
        return d[key], p
    except (KeyError, IndexError, TypeError) as e:
        raise SceneError(p, "missing") from e


def _object(x: Any, path: str) -> None:
    if not isinstance(x, dict):
        raise SceneError(path, "expected an object")


def _parse(path: str, f: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    """Calls `f` and turns value errors into `SceneError`s at `path`"""
    try:
        return f(*args, **kwargs)
    except SceneError:
        raise
    except (ValueError, TypeError) as e:
        raise SceneError(path, str(e)) from e


def _vector(x: Any, path: str, size: int) -> np.ndarray:
    if not isinstance(x, list) or len(x) != size:
        raise SceneError(path, f"expected a list of {size} numbers")
    return _parse(path, np.array, x, dtype=float)


def _matrix(x: Any, path: str, size: int) -> np.ndarray:
    if not isinstance(x, list) or len(x) != size * size:
        raise SceneError(
            path, f"expected a flat row-major list of {size * size} numbers"
        )
    return _parse(path, np.array, x, dtype=float).reshape(size, size)


def _points(x: Any, path: str, d: int) -> np.ndarray:
    if not isinstance(x, list) or not all(
        isinstance(p, list) and len(p) == d for p in x
    ):
        raise SceneError(path, f"expected a list of points of size {d}")
    return _parse(path, np.array, x, dtype=float).reshape(-1, d)


def _polyline(x: Any, path: str, d: int) -> Polyline:
    w, p = _at(x, "waypoints", path)
    return _parse(p, Polyline, _points(w, p, d))


def _box(x: Any, path: str, d: int) -> Box:
    lo, plo = _at(x, "lo", path)
    hi, phi = _at(x, "hi", path)
    return _parse(path, Box, _vector(lo, plo, d), _vector(hi, phi, d))


def _face(x: Any, path: str, d: int) -> GaussianFace:
    mu, pmu = _at(x, "mu", path)
    sigma, psigma = _at(x, "sigma", path)
    return _parse(
        psigma,
        GaussianFace,
        mu=_vector(mu, pmu, d + 1),
        sigma=_matrix(sigma, psigma, d + 1),
    )


def _faces(x: Any, path: str, d: int) -> tuple[GaussianFace, ...]:
    faces, p = _at(x, "faces", path)
    if not isinstance(faces, list) or not faces:
        raise SceneError(p, "expected a nonempty list of faces")
    return tuple(_face(f, f"{p}[{j}]", d) for j, f in enumerate(faces))


def _obstacle(x: Any, path: str, d: int) -> PgdfObstacle:
    i, _ = _at(x, "id", path)
    faces = _faces(x, path, d)
    joint = None
    if isinstance(x, dict) and "joint_sigma" in x:
        k = len(faces) * (d + 1)
        joint = _matrix(x["joint_sigma"], f"{path}.joint_sigma", k)
    return _parse(
        path, PgdfObstacle, id=str(i), faces=faces, joint_sigma=joint
    )


def _clouds(x: Any, path: str, d: int) -> list[FacePointCloud]:
    faces, p = _at(x, "faces", path)
    if not isinstance(faces, list) or not faces:
        raise SceneError(p, "expected a nonempty list of faces")
    result = []
    for j, f in enumerate(faces):
        pf = f"{p}[{j}]"
        pts, ppts = _at(f, "points", pf)
        sd, psd = _at(f, "noise_sd", pf)
        prior, pprior = _at(f, "prior", pf)
        result.append(
            _parse(
                pf,
                FacePointCloud,
                points=_points(pts, ppts, d),
                noise_sd=_parse(psd, float, sd),
                prior=_face(prior, pprior, d),
            )
        )
    return result


_PLANNER_OPTIONAL = {
    "eps_precision": "eps_p",
    "eps_floor": "eps_floor",
    "step_size": "step_size",
    "goal_bias": "goal_bias",
    "max_iterations": "max_iterations",
    "goal_radius": "goal_radius",
}


def _planner(x: Any, path: str, d: int) -> PlannerConfig:
    _object(x, path)
    start, ps = _at(x, "start", path)
    goal, pg = _at(x, "goal", path)
    ws, pws = _at(x, "workspace", path)
    eps, peps = _at(x, "eps_safe", path)
    kw = {
        v: x[k] for k, v in _PLANNER_OPTIONAL.items() if x.get(k) is not None
    }
    return _parse(
        path,
        PlannerConfig,
        start=_vector(start, ps, d),
        goal=_vector(goal, pg, d),
        workspace=_box(ws, pws, d),
        eps_safe=_parse(peps, float, eps),
        **kw,
    )


def _stage(x: Any, path: str, d: int, ids: set[str]) -> Stage:
    _object(x, path)
    at, pat = _at(x, "at", path)
    time = _parse(f"{path}.time", float, x.get("time", 0.0))
    updates = []
    for j, u in enumerate(x.get("updates", [])):
        pu = f"{path}.updates[{j}]"
        i, pid = _at(u, "id", pu)
        if str(i) not in ids:
            raise SceneError(pid, f"unknown obstacle '{i}'")
        updates.append(
            ObservationUpdate(
                obstacle_id=str(i), faces=_faces(u, pu, d), time=time
            )
        )
    plan = None
    if x.get("plan") is not None:
        plan = _polyline(x["plan"], f"{path}.plan", d)
        if not np.allclose(plan.waypoints[0], _vector(at, pat, d)):
            raise SceneError(
                f"{path}.plan", "a stage plan must start at the stage point"
            )
    return Stage(
        at=_vector(at, pat, d), updates=tuple(updates), plan=plan, time=time
    )


def _online(
    x: Any, path: str, d: int, initial: Polyline, ids: set[str]
) -> OnlineScript:
    _object(x, path)
    eps, peps = _at(x, "contract_eps", path)
    stages, pst = (x.get("stages", []), f"{path}.stages")
    if not isinstance(stages, list):
        raise SceneError(pst, "expected a list of stages")
    kw = {
        v: _parse(f"{path}.{k}", float, x[k])
        for k, v in (("eps_precision", "eps_p"), ("eps_floor", "eps_floor"))
        if x.get(k) is not None
    }
    return _parse(
        path,
        OnlineScript,
        contract_eps=_parse(peps, float, eps),
        initial=initial,
        stages=tuple(
            _stage(s, f"{pst}[{j}]", d, ids) for j, s in enumerate(stages)
        ),
        **kw,
    )


def parse_scene(document: dict, name: str = "") -> Scene:
    """
    Validates a scene document. See the module documentation for the format.

    Raises:
        SceneError: With the path to the first invalid field.
    """
    if not isinstance(document, dict):
        raise SceneError("", "a scene must be a JSON object")
    dim, pdim = _at(document, "dimension", "")
    if dim not in SUPPORTED_DIMENSIONS:
        raise SceneError(pdim, f"unsupported dimension {dim}")
    obstacles = tuple(
        _obstacle(o, f"obstacles[{i}]", dim)
        for i, o in enumerate(document.get("obstacles", []))
    )
    ids = [o.id for o in obstacles]
    if len(set(ids)) != len(ids):
        raise SceneError("obstacles", "obstacle ids must be unique")
    clouds = {}
    for i, c in enumerate(document.get("point_clouds", [])):
        cid, _ = _at(c, "id", f"point_clouds[{i}]")
        clouds[str(cid)] = _clouds(c, f"point_clouds[{i}]", dim)
    trajectory = None
    if document.get("trajectory") is not None:
        trajectory = _polyline(document["trajectory"], "trajectory", dim)
    planner = None
    if document.get("planner") is not None:
        planner = _planner(document["planner"], "planner", dim)
    online = None
    if document.get("online") is not None:
        if trajectory is None:
            raise SceneError("trajectory", "an online script needs one")
        online = _online(
            document["online"],
            "online",
            dim,
            trajectory,
            set(ids) | set(clouds),
        )
    window = None
    if document.get("window") is not None:
        window = _box(document["window"], "window", dim)
    return Scene(
        dimension=dim,
        obstacles=obstacles,
        trajectory=trajectory,
        planner=planner,
        online=online,
        point_clouds=clouds,
        window=window,
        name=name,
    )


def load_scene(path: str | Path) -> Scene:
    """
    Loads and validates a scene file. If `path` starts with `PRESET:`, the
    rest is looked up in `SCENE_PRESETS`.

    Raises:
        SceneError: If the file does not exist or is invalid.
    """
    path = str(path)
    if path.startswith("PRESET:"):
        name = path[7:]
        if name not in SCENE_PRESETS:
            raise SceneError(
                "", f"unknown preset '{name}', available presets are "
                + ", ".join(sorted(SCENE_PRESETS))
            )
        logging.debug("Using preset scene: {}", name)
        file = SCENES_DIR / SCENE_PRESETS[name]
    else:
        file, name = Path(path), Path(path).stem
    if not file.is_file():
        raise SceneError("", f"scene file {file} does not exist")
    try:
        document = tb.load_json(file)
    except ValueError as e:
        raise SceneError("", f"invalid JSON: {e}") from e
    return parse_scene(document, name)


def scene_to_dict(scene: Scene) -> dict:
    """JSON friendly representation, inverse of `parse_scene`"""
    d: dict = {
        "dimension": scene.dimension,
        "obstacles": [o.to_dict() for o in scene.obstacles],
    }
    if scene.point_clouds:
        d["point_clouds"] = [
            {
                "id": i,
                "faces": [
                    {
                        "points": c.points.tolist(),
                        "noise_sd": c.noise_sd,
                        "prior": c.prior.to_dict(),
                    }
                    for c in clouds
                ],
            }
            for i, clouds in scene.point_clouds.items()
        ]
    if scene.trajectory is not None:
        d["trajectory"] = scene.trajectory.to_dict()
    if scene.planner is not None:
        d["planner"] = scene.planner.to_dict()
    if scene.online is not None:
        d["online"] = {
            "contract_eps": scene.online.contract_eps,
            "eps_precision": scene.online.eps_p,
            "eps_floor": scene.online.eps_floor,
            "stages": [
                {
                    "at": s.at.tolist(),
                    "time": s.time,
                    "updates": [
                        {"id": u.obstacle_id, "faces": u.to_dict()["faces"]}
                        for u in s.updates
                    ],
                    "plan": None if s.plan is None else s.plan.to_dict(),
                }
                for s in scene.online.stages
            ],
        }
    if scene.window is not None:
        d["window"] = scene.window.to_dict()
    return d


def dump_scene(scene: Scene, path: str | Path) -> None:
    """Writes a scene to a JSON file"""
    tb.save_json(scene_to_dict(scene), path)


def fit_scene(scene: Scene) -> Scene:
    """
    Fits an obstacle for each point cloud entry (see
    `safeshadow.pgdf.fit_obstacle`) and adds it to the scene, replacing any
    obstacle with the same id. The point clouds are removed.
    """
    fitted = {
        i: fit_obstacle(i, clouds) for i, clouds in scene.point_clouds.items()
    }
    kept = [o for o in scene.obstacles if o.id not in fitted]
    logging.info("Fitted {} obstacle(s)", len(fitted))
    return replace(
        scene,
        obstacles=tuple(kept) + tuple(fitted[i] for i in sorted(fitted)),
        point_clouds={},
    )
