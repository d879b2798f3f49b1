"""Closed-loop simulation: kinematic bicycle ego, constant-velocity agents, PID tracking."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DomainError
from .semgrid import WorldState, points_in_polygon, polygon_bounds, rect_corners
from .trajectory import RoutePolyline, SdvState, Trajectory
from .validation import wrap_angle

log = logging.getLogger(__name__)

OUTCOMES = ("success", "collision", "off_drivable", "timeout")
STEER_MAX = 0.6
ACCEL_MIN, ACCEL_MAX = -6.0, 3.0
WHEELBASE = 2.7


@dataclass(frozen=True)
class ControlCommand:
    steering: float = 0.0
    accel: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steering", float(np.clip(self.steering, -STEER_MAX, STEER_MAX)))
        object.__setattr__(self, "accel", float(np.clip(self.accel, ACCEL_MIN, ACCEL_MAX)))


@dataclass(frozen=True)
class PidGains:
    kp_lat: float = 0.25
    ki_lat: float = 0.01
    kd_lat: float = 0.05
    k_heading: float = 1.2
    kp_speed: float = 1.0
    ki_speed: float = 0.05
    kd_speed: float = 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    world: WorldState
    route: RoutePolyline
    goal: np.ndarray
    ego: SdvState
    human: Trajectory = None
    timeout: float = 30.0
    seed: int = 0
    goal_max_speed: float = np.inf

    def __post_init__(self):
        if not self.timeout > 0:
            raise DomainError("timeout must be positive")
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))

    @property
    def has_moving_agents(self):
        return any(a.speed > 0 for a in self.world.agents)


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    scenario: str
    seed: int
    outcome: str
    driving_time: float
    route_time: float
    trace: np.ndarray = field(repr=False, default=None)   # (n_ticks + 1, 6)
    fallbacks: int = 0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    replan_every: int = 5               # ticks; 5 * 0.1 s = one map frame
    ego_footprint: tuple = (4.5, 2.0)
    wheelbase: float = WHEELBASE
    on_route_tol: float = 2.0
    gains: PidGains = PidGains()
    lookahead: float = 0.5


# -- dynamics -------------------------------------------------------------------

def step_world(world, ego, cmd, dt=0.1, wheelbase=WHEELBASE):
    """Advance agents at constant velocity and the ego by a kinematic bicycle."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    kappa = np.tan(cmd.steering) / wheelbase
    v_next = max(0.0, ego.v + cmd.accel * dt)
    nxt = SdvState(
        ego.x + ego.v * np.cos(ego.theta) * dt,
        ego.y + ego.v * np.sin(ego.theta) * dt,
        ego.theta + ego.v * kappa * dt,
        kappa,
        v_next,
        (v_next - ego.v) / dt,
    )
    return replace(world.advanced(dt), ego_pose=(nxt.x, nxt.y, nxt.theta)), nxt


def rects_overlap(a, b):
    """Separating-axis test for two convex quadrilaterals given as ``(4, 2)`` corners."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for ex, ey in edges:
            axis = np.array([-ey, ex])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


# -- tracking -------------------------------------------------------------------

class PidTracker:
    """Tracks the plan point ``lookahead`` seconds ahead.

    Steering combines curvature feed-forward, PID on cross-track error and a
    proportional heading term; acceleration is feed-forward plus PID on speed
    error.
    """

    def __init__(self, gains=None, wheelbase=WHEELBASE, lookahead=0.5, dt=0.1):
        self.gains = gains or PidGains()
        self.wheelbase = wheelbase
        self.lookahead = lookahead
        self.dt = dt
        self.reset()

    def reset(self):
        self._int_ct = 0.0
        self._int_v = 0.0
        self._prev_ct = None
        self._prev_ev = None

    def reference(self, plan, start, t):
        """Interpolated plan state at ``t`` seconds after the plan's start state."""
        states = np.vstack([start.as_array(), plan.states])
        times = np.arange(len(states)) * plan.dt
        th = np.unwrap(states[:, 2])
        ref = [np.interp(t, times, states[:, k]) for k in range(6)]
        ref[2] = np.interp(t, times, th)
        return ref

    def __call__(self, ego, plan, elapsed=0.0, start=None):
        g = self.gains
        start = start or ego
        rx, ry, rth, rk, rv, ra = self.reference(plan, start, elapsed + self.lookahead)
        dx, dy = ego.x - rx, ego.y - ry
        e_ct = -np.sin(rth) * dx + np.cos(rth) * dy
        e_th = wrap_angle(ego.theta - rth)
        d_ct = 0.0 if self._prev_ct is None else (e_ct - self._prev_ct) / self.dt
        self._int_ct += e_ct * self.dt
        self._prev_ct = e_ct
        steer = (np.arctan(self.wheelbase * rk)
                 - (g.kp_lat * e_ct + g.ki_lat * self._int_ct + g.kd_lat * d_ct)
                 - g.k_heading * e_th)
        e_v = rv - ego.v
        d_v = 0.0 if self._prev_ev is None else (e_v - self._prev_ev) / self.dt
        self._int_v += e_v * self.dt
        self._prev_ev = e_v
        accel = ra + g.kp_speed * e_v + g.ki_speed * self._int_v + g.kd_speed * d_v
        return ControlCommand(float(steer), float(accel))


def pid_track(ego, plan, gains=None, elapsed=0.0, start=None, wheelbase=WHEELBASE):
    """Single control step from a fresh tracker."""
    if plan is None or len(plan.states) == 0:
        raise DomainError("empty plan")
    return PidTracker(gains, wheelbase)(ego, plan, elapsed, start)


# -- episodes -------------------------------------------------------------------

def randomize(scn, rng):
    """Seeded jitter of ego speed and agent placement/speed."""
    ego = replace(scn.ego, v=max(0.0, scn.ego.v + rng.uniform(-1.0, 1.0)))
    agents = []
    for a in scn.world.agents:
        shift = rng.uniform(-1.5, 1.5)
        agents.append(replace(
            a,
            x=a.x + shift * np.cos(a.theta),
            y=a.y + shift * np.sin(a.theta),
            speed=a.speed * rng.uniform(0.9, 1.1),
        ))
    return replace(scn, ego=ego, world=replace(scn.world, agents=tuple(agents)))


def episode_rng(suite_seed, scenario_seed, episode_seed):
    return np.random.default_rng(np.random.SeedSequence([suite_seed, scenario_seed, episode_seed]))


def _on_drivable(world, x, y, bounds=None):
    if bounds is None:
        bounds = polygon_bounds(world.drivable) if world.drivable else np.zeros((0, 4))
    near = (bounds[:, 0] <= x) & (x <= bounds[:, 2]) & (bounds[:, 1] <= y) & (y <= bounds[:, 3])
    return any(points_in_polygon(x, y, world.drivable[n]) for n in np.flatnonzero(near))


def run_episode(scn, planner, forecaster, cfg=None, seed=None, suite_seed=0):
    """Closed-loop rollout: replan every ``cfg.replan_every`` ticks, PID-track in between.

    ``seed=None`` runs the scenario as written; otherwise agents and ego speed
    are jittered by :func:`randomize` with a stream derived from
    ``(suite_seed, scn.seed, seed)``.
    """
    cfg = cfg or SimConfig()
    if seed is not None:
        scn = randomize(scn, episode_rng(suite_seed, scn.seed, seed))
    ego = scn.ego
    world = replace(scn.world, ego_pose=(ego.x, ego.y, ego.theta))
    tracker = PidTracker(cfg.gains, cfg.wheelbase, cfg.lookahead, cfg.dt)
    n_ticks = int(round(scn.timeout / cfg.dt))
    trace = [ego.as_array()]
    plan, start, elapsed = None, ego, 0.0
    fallbacks = 0
    route_ticks = 0
    outcome = "timeout"
    tick = 0
    L, W = cfg.ego_footprint
    bounds = polygon_bounds(world.drivable) if world.drivable else np.zeros((0, 4))
    for tick in range(1, n_ticks + 1):
        if (tick - 1) % cfg.replan_every == 0:
            result = planner.plan(ego, scn.route, forecaster(world))
            plan, start, elapsed = result.trajectory, ego, 0.0
            if plan is None:
                fallbacks += 1
                log.info("%s: no feasible candidate at t=%.1f s, braking", scn.name, (tick - 1) * cfg.dt)
        if plan is None:
            cmd = ControlCommand(0.0, ACCEL_MIN)
        else:
            cmd = tracker(ego, plan, elapsed, start)
        world, ego = step_world(world, ego, cmd, cfg.dt, cfg.wheelbase)
        elapsed += cfg.dt
        trace.append(ego.as_array())
        if scn.route.distance([ego.x, ego.y])[0] <= cfg.on_route_tol:
            route_ticks += 1
        ego_box = rect_corners(ego.x, ego.y, ego.theta, L, W)
        if any(rects_overlap(ego_box, a.corners()) for a in world.agents):
            outcome = "collision"
            break
        if not _on_drivable(world, ego.x, ego.y, bounds):
            outcome = "off_drivable"
            break
        if points_in_polygon(ego.x, ego.y, scn.goal) and ego.v <= scn.goal_max_speed:
            outcome = "success"
            break
    return EpisodeResult(scn.name, -1 if seed is None else seed, outcome,
                         tick * cfg.dt, route_ticks * cfg.dt, np.array(trace), fallbacks)
