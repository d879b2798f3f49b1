import numpy as np
import pytest
from hypothesis import given, strategies as st

from bevplan.exceptions import DomainError
from bevplan.planner import DRIVING_WEIGHTS, PLANNING_FOOTPRINT, CostMapPlanner
from bevplan.scenarios import bundled_path, load_scenario, wall_scenario
from bevplan.semgrid import Agent, OracleForecaster, WorldState, rect_corners
from bevplan.sim import (
    STEER_MAX, ControlCommand, EpisodeResult, PidTracker, pid_track, rects_overlap,
    run_episode, step_world,
)
from bevplan.trajectory import HORIZON, SdvState, Trajectory

from oracles import rect_polygon

PLANNER = CostMapPlanner(DRIVING_WEIGHTS, footprint=PLANNING_FOOTPRINT)


def _straight_plan(x0, v, y=0.0):
    k = np.arange(1, HORIZON + 1)
    s = np.zeros((HORIZON, 6))
    s[:, 0] = x0 + v * 0.5 * k
    s[:, 1] = y
    s[:, 4] = v
    return Trajectory(s)


# -- dynamics ------------------------------------------------------------------

def test_coasting_advances_along_heading():
    _, ego = step_world(WorldState(), SdvState(0.0, 0.0, 0.0, 0.0, 10.0), ControlCommand(0.0, 0.0))
    assert (ego.x, ego.y, ego.v) == (pytest.approx(1.0), 0.0, 10.0)


@given(steer=st.floats(-1.0, 1.0), th=st.floats(-3.0, 3.0))
def test_standing_still_does_not_move(steer, th):
    _, ego = step_world(WorldState(), SdvState(3.0, -2.0, th), ControlCommand(steer, 0.0))
    assert (ego.x, ego.y) == (3.0, -2.0)


def test_full_left_heading_change():
    ego = SdvState(0.0, 0.0, 0.0, 0.0, 5.0)
    world = WorldState()
    for _ in range(10):
        world, ego = step_world(world, ego, ControlCommand(STEER_MAX, 0.0))
    heading = 0.0
    for _ in range(10):
        heading += 5.0 * np.tan(0.6) / 2.7 * 0.1
    assert ego.theta == pytest.approx(heading, abs=1e-12)
    # 5 * tan(0.6) / 2.7 = 1.2669, quoted as roughly 1.268
    assert ego.theta == pytest.approx(1.268, abs=2e-3)


def test_agents_move_with_the_world():
    world = WorldState(agents=(Agent("pedestrian", 0.0, 0.0, np.pi / 2, 1.5, 0.6, 0.6),))
    world, _ = step_world(world, SdvState(0.0, -10.0), ControlCommand())
    assert world.agents[0].y == pytest.approx(0.15)
    with pytest.raises(DomainError):
        step_world(world, SdvState(0.0, 0.0), ControlCommand(), dt=0.0)


def test_command_limits():
    cmd = ControlCommand(5.0, -50.0)
    assert cmd.steering == STEER_MAX and cmd.accel == -6.0


# -- tracking ------------------------------------------------------------------

def test_on_plan_gives_zero_command():
    ego = SdvState(0.0, 0.0, 0.0, 0.0, 8.0)
    cmd = pid_track(ego, _straight_plan(0.0, 8.0))
    assert cmd.steering == pytest.approx(0.0, abs=1e-12)
    assert cmd.accel == pytest.approx(0.0, abs=1e-12)


def test_left_of_plan_steers_right():
    ego = SdvState(0.0, 1.0, 0.0, 0.0, 8.0)
    assert pid_track(ego, _straight_plan(0.0, 8.0)).steering < 0
    assert pid_track(SdvState(0.0, -1.0, 0.0, 0.0, 8.0), _straight_plan(0.0, 8.0)).steering > 0


def test_empty_plan_rejected():
    with pytest.raises(DomainError):
        pid_track(SdvState(0.0, 0.0), None)


def test_lateral_step_response_settles():
    ego = SdvState(0.0, 1.0, 0.0, 0.0, 5.0)
    tracker = PidTracker()
    world = WorldState()
    offsets = []
    for tick in range(60):
        if tick % 5 == 0:
            plan, start, elapsed = _straight_plan(ego.x, 5.0), ego, 0.0
        world, ego = step_world(world, ego, tracker(ego, plan, elapsed, start))
        elapsed += 0.1
        offsets.append(abs(ego.y))
    assert max(offsets[30:]) < 0.1       # settled within 3 s
    assert offsets[-1] < 0.05


# -- collision test ------------------------------------------------------------

def test_separating_axis_matches_polygon_oracle():
    rng = np.random.default_rng(11)
    hits = 0
    for _ in range(1000):
        a = rect_corners(*rng.uniform(-3, 3, 2), rng.uniform(-np.pi, np.pi), *rng.uniform(0.3, 5, 2))
        b = rect_corners(*rng.uniform(-3, 3, 2), rng.uniform(-np.pi, np.pi), *rng.uniform(0.3, 5, 2))
        expected = rect_polygon(a).intersects(rect_polygon(b))
        assert rects_overlap(a, b) == expected
        hits += expected
    assert 100 < hits < 900      # both outcomes well represented


# -- episodes ------------------------------------------------------------------

@pytest.fixture(scope="module")
def straight_scene():
    return load_scenario(bundled_path("suite", "00_straight.json"))


def test_empty_road_reaches_goal(straight_scene):
    res = run_episode(straight_scene, PLANNER, OracleForecaster(), seed=0)
    assert isinstance(res, EpisodeResult)
    assert res.outcome == "success"
    assert res.route_time == pytest.approx(res.driving_time)


def test_episode_is_deterministic(straight_scene):
    a = run_episode(straight_scene, PLANNER, OracleForecaster(), seed=3)
    b = run_episode(straight_scene, PLANNER, OracleForecaster(), seed=3)
    assert (a.outcome, a.driving_time, a.route_time) == (b.outcome, b.driving_time, b.route_time)
    assert np.array_equal(a.trace, b.trace)


def test_no_teleportation(straight_scene):
    res = run_episode(straight_scene, PLANNER, OracleForecaster(), seed=1)
    step = np.hypot(*np.diff(res.trace[:, :2], axis=0).T)
    assert np.all(step <= res.trace[:-1, 4] * 0.1 + 1e-9)


def test_wall_times_out_without_contact():
    scn = wall_scenario()
    res = run_episode(scn, PLANNER, OracleForecaster(), seed=0)
    assert res.outcome == "timeout"
    front = res.trace[:, 0] + 4.5 / 2
    wall_back = min(a.x - a.length / 2 for a in scn.world.agents)
    assert front.max() < wall_back
    assert res.trace[-1, 4] < 0.1
