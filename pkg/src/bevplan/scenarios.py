"""Scenario files, the bundled closed-loop suite and the synthetic learning dataset.

Scenario JSON schema::

    {"name": str, "seed": int, "timeout": float, "goal_max_speed": float (optional),
     "map": {"drivable": [polygon, ...], "lane": [polygon, ...]},
     "agents": [{"class", "x", "y", "theta", "speed", "length", "width"}, ...],
     "route": [[x, y, lane_id], ...],
     "ego": {"x", "y", "theta", "v"},
     "goal": polygon,
     "human": "relative/path.csv" or null}

Polygons are lists of ``[x, y]`` vertices in world meters.
"""

import json
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .bevg import write_bevg
from .exceptions import FormatError
from .geometry import DepthSet, GridSpec, save_rig, surround_rig, toy_featurize
from .learning import TrainingExample
from .planner import (DRIVING_WEIGHTS, PLANNING_FOOTPRINT, CostMapPlanner, argmin_cost,
                      cost_features, total_cost)
from .semgrid import DRIVABLE, VEHICLE, Agent, SemanticGridSeq, WorldState, oracle_forecast
from .sim import Scenario
from .trajectory import (RoutePolyline, SamplerConfig, SdvState, read_trajectory_csv,
                         sample_candidates, write_trajectory_csv)

LANE_WIDTH = 3.5


# -- JSON ----------------------------------------------------------------------

def scenario_to_dict(scn, human_path=None):
    poly = lambda p: np.asarray(p).tolist()
    ids = np.append(scn.route.lane_ids, scn.route.lane_ids[-1])
    out = {
        "name": scn.name,
        "seed": int(scn.seed),
        "timeout": float(scn.timeout),
        "map": {"drivable": [poly(p) for p in scn.world.drivable],
                "lane": [poly(p) for p in scn.world.lanes]},
        "agents": [{"class": a.cls, "x": a.x, "y": a.y, "theta": a.theta, "speed": a.speed,
                    "length": a.length, "width": a.width} for a in scn.world.agents],
        "route": [[x, y, int(i)] for (x, y), i in zip(scn.route.points.tolist(), ids)],
        "ego": {"x": scn.ego.x, "y": scn.ego.y, "theta": scn.ego.theta, "v": scn.ego.v},
        "goal": poly(scn.goal),
        "human": human_path,
    }
    if np.isfinite(scn.goal_max_speed):
        out["goal_max_speed"] = float(scn.goal_max_speed)
    return out


def scenario_from_dict(d, base_dir=None):
    if not isinstance(d, dict):
        raise FormatError(f"scenario must be a JSON object, got {type(d).__name__}")
    try:
        agents = tuple(Agent(a["class"], float(a["x"]), float(a["y"]), float(a["theta"]),
                             float(a["speed"]), float(a["length"]), float(a["width"]))
                       for a in d.get("agents", []))
        route = np.asarray(d["route"], dtype=np.float64)
        ego = SdvState(float(d["ego"]["x"]), float(d["ego"]["y"]), float(d["ego"].get("theta", 0.0)),
                       0.0, float(d["ego"].get("v", 0.0)))
        world = WorldState(tuple(d["map"].get("drivable", [])), tuple(d["map"].get("lane", [])),
                           agents, (ego.x, ego.y, ego.theta))
        human = None
        if d.get("human"):
            path = Path(d["human"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            human = read_trajectory_csv(path)
        return Scenario(
            name=str(d["name"]), world=world,
            route=RoutePolyline(route[:, :2], route[:-1, 2].astype(int)),
            goal=np.asarray(d["goal"], dtype=np.float64), ego=ego, human=human,
            timeout=float(d["timeout"]), seed=int(d.get("seed", 0)),
            goal_max_speed=float(d.get("goal_max_speed", np.inf)),
        )
    except (KeyError, TypeError, IndexError, AttributeError) as exc:
        raise FormatError(f"malformed scenario: {exc!r}") from exc


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, base_dir=path.parent)


def save_scenario(path, scn):
    path = Path(path)
    human_name = None
    if scn.human is not None:
        human_name = f"{path.stem}_human.csv"
        write_trajectory_csv(path.parent / human_name, scn.human)
    path.write_text(json.dumps(scenario_to_dict(scn, human_name), indent=1) + "\n")
    return path


def list_suite(suite_dir):
    return sorted(Path(suite_dir).glob("*.json"))


def bundled_path(*parts):
    return Path(str(resources.files("bevplan").joinpath("data", *parts)))


# -- road geometry ---------------------------------------------------------------

def _quad_strips(center, left, right, step=1):
    """Drivable quads between lateral offsets ``right`` and ``left`` of a polyline."""
    pts = np.asarray(center)
    seg = np.diff(pts, axis=0)
    h = np.arctan2(seg[:, 1], seg[:, 0])
    hv = np.concatenate([h[:1], (h[:-1] + h[1:]) / 2, h[-1:]])
    n = np.stack([-np.sin(hv), np.cos(hv)], axis=-1)
    L, R = pts + left * n, pts + right * n
    quads = []
    for k in range(0, len(pts) - 1, step):
        k1 = min(k + step, len(pts) - 1)
        quads.append(np.array([R[k], R[k1], L[k1], L[k]]))
    return quads


def straight_road(x0=-60.0, x1=260.0):
    drivable = (np.array([[x0, -1.75], [x1, -1.75], [x1, 5.25], [x0, 5.25]]),)
    lanes = (np.array([[x0, -1.75], [x1, -1.75], [x1, 1.75], [x0, 1.75]]),
             np.array([[x0, 1.75], [x1, 1.75], [x1, 5.25], [x0, 5.25]]))
    route = RoutePolyline(np.array([[x0 + 40, 0.0], [x1 - 20, 0.0]]), [0])
    return drivable, lanes, route


def curved_road(radius=60.0, straight=40.0, sweep=np.pi / 2, spacing=3.0):
    """Straight lead-in, left-hand arc, straight exit; route on the right lane center."""
    lead = np.column_stack([np.arange(-60.0, straight, spacing), np.zeros(int(np.ceil((straight + 60) / spacing)))])
    n_arc = int(np.ceil(radius * sweep / spacing))
    ang = np.linspace(0.0, sweep, n_arc + 1)
    arc = np.column_stack([straight + radius * np.sin(ang), radius * (1 - np.cos(ang))])
    end = arc[-1]
    tangent = np.array([np.cos(sweep), np.sin(sweep)])
    exit_ = end + np.arange(1, 40) [:, None] * spacing * tangent
    center = np.vstack([lead, arc, exit_])
    drivable = tuple(_quad_strips(center, 5.25, -1.75))
    lanes = tuple(_quad_strips(center, 1.75, -1.75)) + tuple(_quad_strips(center, 5.25, 1.75))
    route = RoutePolyline(center, np.zeros(len(center) - 1, dtype=int))
    return drivable, lanes, route


def _goal_box(x_lo, x_hi, y_lo=-1.75, y_hi=5.25):
    return np.array([[x_lo, y_lo], [x_hi, y_lo], [x_hi, y_hi], [x_lo, y_hi]])


def _vehicle(x, y, theta=0.0, speed=0.0):
    return Agent("vehicle", x, y, theta, speed, 4.5, 2.0)


def _expert_human(scn, footprint=PLANNING_FOOTPRINT):
    maps = oracle_forecast(replace(scn.world, ego_pose=(scn.ego.x, scn.ego.y, scn.ego.theta)))
    res = CostMapPlanner(DRIVING_WEIGHTS, footprint=footprint).plan(scn.ego, scn.route, maps)
    return replace(scn, human=res.trajectory)


def bundled_suite():
    """Six desk-scale scenes: straight, curve, cut-in, pedestrian crossing, blocked lane, full blockage."""
    drivable, lanes, route = straight_road()
    ego = SdvState(0.0, 0.0, 0.0, 0.0, 8.0)
    base = dict(route=route, ego=ego, timeout=30.0)
    straight_world = WorldState(drivable, lanes)
    scenes = [
        Scenario("straight", straight_world, goal=_goal_box(120, 130), seed=1, **base),
        Scenario("cut_in", replace(straight_world, agents=(_vehicle(22.0, 3.5, -0.25, 5.0),)),
                 goal=_goal_box(120, 130), seed=3, **base),
        Scenario("pedestrian_crossing",
                 replace(straight_world, agents=(Agent("pedestrian", 35.0, -5.0, np.pi / 2, 1.4, 0.6, 0.6),)),
                 goal=_goal_box(120, 130), seed=4, **base),
        Scenario("blocked_lane", replace(straight_world, agents=(_vehicle(45.0, 0.0),)),
                 goal=_goal_box(120, 130), seed=5, **base),
        # every lane is blocked: success means coming to rest in front of the wall
        Scenario("full_blockage",
                 replace(straight_world, agents=(_vehicle(48.0, 0.0), _vehicle(48.0, 3.5))),
                 goal=_goal_box(20.0, 42.0), seed=6, goal_max_speed=0.2,
                 **{**base, "timeout": 30.0}),
    ]
    c_drivable, c_lanes, c_route = curved_road()
    scenes.insert(1, Scenario("curve", WorldState(c_drivable, c_lanes), c_route,
                              goal=_curve_goal(c_route), ego=SdvState(0.0, 0.0, 0.0, 0.0, 7.0),
                              timeout=30.0, seed=2))
    return [_expert_human(s) for s in scenes]


def _curve_goal(route):
    s = route.length - 40.0
    p = route.point_at(s)
    h = float(route.heading_at(s))
    t, n = np.array([np.cos(h), np.sin(h)]), np.array([-np.sin(h), np.cos(h)])
    return np.array([p - 1.75 * n, p + 10 * t - 1.75 * n, p + 10 * t + 5.25 * n, p + 5.25 * n])


def wall_scenario():
    """Every lane blocked with the goal behind the wall; the expected outcome is a timeout."""
    drivable, lanes, route = straight_road()
    world = WorldState(drivable, lanes, (_vehicle(48.0, 0.0), _vehicle(48.0, 3.5)))
    return Scenario("wall", world, route, _goal_box(90, 100), SdvState(0.0, 0.0, 0.0, 0.0, 8.0),
                    timeout=20.0, seed=7)


def low_probability_fixture(seed):
    """Two mirrored candidates on an open road with a p = 0.3 vehicle patch on one side.

    Ego speed, the patch side and its start are drawn from ``seed``.  Returns
    ``(ego, route, maps, sampler, safe_offset)``; the candidates differ only
    in which side of the lane they take, so route and comfort terms tie.
    """
    rng = np.random.default_rng(seed)
    side = rng.choice([-1.0, 1.0])
    x0 = rng.uniform(15.0, 25.0)
    ego = SdvState(0.0, 0.0, 0.0, 0.0, rng.uniform(6.0, 10.0))
    route = RoutePolyline([[-10.0, 0.0], [200.0, 0.0]])
    spec = GridSpec(-10.0, -16.0, 0.5, 160, 64)
    values = np.zeros((11,) + spec.shape + (4,))
    values[..., DRIVABLE] = 1.0
    xs, ys = spec.centers()
    patch = (xs >= x0) & (xs <= x0 + 40.0) & (side * ys >= 1.0) & (side * ys <= 5.0)
    values[:, patch, VEHICLE] = 0.3
    maps = SemanticGridSeq(values, spec)
    sampler = SamplerConfig(lateral_offsets=(-1.5, 1.5), accel_profiles=(0.0,))
    return ego, route, maps, sampler, -1.5 * side


def write_suite(out_dir, scenes=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = bundled_suite() if scenes is None else scenes
    return [save_scenario(out_dir / f"{k:02d}_{s.name}.json", s) for k, s in enumerate(scenes)]


# -- synthetic learning data -------------------------------------------------------

# weights the synthetic "human" minimizes; the learner never sees them
TRUE_WEIGHTS = DRIVING_WEIGHTS

# Training candidates vary only the lateral offset, at cruise speed.  With the
# full speed-profile product the l1 margins of far-off braking candidates are
# ~100 m against cost gaps of a few units, and the smallest separating weights
# lie out of reach of 200 steps at the default learning rate.
TRAINING_SAMPLER = SamplerConfig(accel_profiles=(0.0,))


def featurize_scenario(scn, human, sampler=None, thresholds=None, footprint=PLANNING_FOOTPRINT,
                       forecaster=oracle_forecast):
    """Training example for ``scn`` with forecasts at t0 and the feasible sampled candidates."""
    maps = forecaster(replace(scn.world, ego_pose=(scn.ego.x, scn.ego.y, scn.ego.theta)))
    cands = [c for c in sample_candidates(scn.ego, scn.route, sampler or TRAINING_SAMPLER) if c.feasible]
    phi = np.array([cost_features(c.trajectory, maps, scn.route, thresholds, footprint) for c in cands])
    return TrainingExample(
        candidates=[c.trajectory for c in cands], features=phi, human=human,
        human_features=cost_features(human, maps, scn.route, thresholds, footprint),
        scenario_id=scn.name,
    )


def is_separable(example, w, rel_gap=1e-6):
    """Whether the human strictly beats every candidate that differs from it in position."""
    costs = total_cost(example.features, w)
    gap = costs - example.human_features @ w.as_array()
    differs = example.distances > 1e-9
    return bool(np.all(gap[differs] > rel_gap * max(1.0, np.abs(costs).max())))


def synthetic_dataset_scenes():
    """Straight two-lane scenes with a row of parked vehicles filling one lane ahead of the ego."""
    drivable, lanes, route = straight_road()
    scenes = []
    k = 0
    for first in (8.0, 14.0, 20.0, 26.0):
        for parked_y, ego_y in ((LANE_WIDTH, 0.0), (0.0, LANE_WIDTH)):
            for v0 in (5.0, 7.0, 9.0):
                row = tuple(_vehicle(first + 6.0 * i, parked_y) for i in range(12))
                ego = SdvState(0.0, ego_y, 0.0, 0.0, v0)
                scenes.append(Scenario(f"parked_{k:02d}", WorldState(drivable, lanes, row), route,
                                       _goal_box(120, 130), ego, timeout=20.0, seed=100 + k))
                k += 1
    return scenes


def build_synthetic_dataset(w_true=TRUE_WEIGHTS, sampler=TRAINING_SAMPLER):
    """Scenes with their human trajectories and training examples, keeping only separable ones.

    The human is the cheapest candidate under ``w_true``, so a separating weight
    vector exists by construction.
    """
    out = []
    for scn in synthetic_dataset_scenes():
        maps = oracle_forecast(replace(scn.world, ego_pose=(scn.ego.x, scn.ego.y, scn.ego.theta)))
        cands = [c.trajectory for c in sample_candidates(scn.ego, scn.route, sampler) if c.feasible]
        phi = np.array([cost_features(t, maps, scn.route, None, PLANNING_FOOTPRINT) for t in cands])
        best = argmin_cost(total_cost(phi, w_true))
        human = cands[best]
        ex = TrainingExample(cands, phi, human, phi[best], scn.name)
        if is_separable(ex, w_true):
            out.append((replace(scn, human=human), ex))
    return out


def write_dataset(out_dir, dataset=None):
    """Write scenario files, human CSVs and ``manifest.txt`` (``scenario.json human.csv`` per line)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = build_synthetic_dataset() if dataset is None else dataset
    lines = []
    for scn, _ in dataset:
        scn_path = out_dir / f"{scn.name}.json"
        human_path = out_dir / f"{scn.name}_human.csv"
        save_scenario(scn_path, replace(scn, human=None))
        write_trajectory_csv(human_path, scn.human)
        lines.append(f"{scn_path.name} {human_path.name}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def read_manifest(path):
    """Pairs of (scenario path, human CSV path), resolved relative to the manifest."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'scenario.json human.csv'")
        pairs.append(tuple(p if Path(p).is_absolute() else path.parent / p for p in map(Path, parts)))
    return pairs


def load_training_examples(manifest, thresholds=None, footprint=PLANNING_FOOTPRINT, sampler=None):
    examples = []
    for scn_path, human_path in read_manifest(manifest):
        scn = load_scenario(scn_path)
        examples.append(featurize_scenario(scn, read_trajectory_csv(human_path), sampler,
                                           thresholds=thresholds, footprint=footprint))
    return examples


# -- bundled data ------------------------------------------------------------------

def write_feature_fixtures(out_dir, cameras, depths=None, n_frames=5, seed=0, upscale=2):
    """Random RGB frames run through :func:`toy_featurize`, one BEVG dump per camera and frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    depths = depths or DepthSet()
    rng = np.random.default_rng(seed)
    paths = []
    for t in range(n_frames):
        for k, cam in enumerate(cameras, start=1):
            rgb = rng.uniform(0.0, 1.0, (cam.height * upscale, cam.width * upscale, 3))
            img = toy_featurize(rgb, (cam.height, cam.width), depths.count)
            paths.append(write_bevg(out_dir / f"frame{t}_cam{k}.bevg", img.to_array()))
    return paths


def write_bundle(out_dir, seed=0):
    """Everything shipped under ``bevplan/data``: suite, dataset, weights, rig and feature dumps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = list(write_suite(out_dir / "suite"))
    written.append(write_dataset(out_dir / "dataset"))
    DRIVING_WEIGHTS.save(out_dir / "weights.txt")
    written.append(out_dir / "weights.txt")
    cameras = surround_rig()
    save_rig(out_dir / "rig.ini", cameras)
    written.append(out_dir / "rig.ini")
    written += write_feature_fixtures(out_dir / "features", cameras, seed=seed)
    return written
