"""SDV states, routes and the lateral-offset x acceleration-profile trajectory sampler."""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DomainError, FormatError
from .validation import wrap_angle

HORIZON = 10
DT = 0.5
STATE_FIELDS = ("x", "y", "theta", "kappa", "v", "a")
# allowed deviation of p[t+1] from p[t] + v[t]*dt*heading[t], as a fraction of v[t]*dt
CONSISTENCY_TOL = 0.15


@dataclass(frozen=True)
class SdvState:
    x: float
    y: float
    theta: float = 0.0
    kappa: float = 0.0
    v: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        if self.v < 0:
            raise DomainError("speed must be non-negative")

    def as_array(self):
        return np.array([self.x, self.y, self.theta, self.kappa, self.v, self.a])

    @classmethod
    def from_array(cls, row):
        return cls(*map(float, row))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ten future states at 0.5 s spacing, stored as a ``(10, 6)`` array."""

    states: np.ndarray
    dt: float = DT

    def __post_init__(self):
        s = np.array(self.states, dtype=np.float64)
        if s.shape != (HORIZON, len(STATE_FIELDS)):
            raise DomainError(f"trajectory must have shape ({HORIZON}, 6), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError("trajectory has non-finite values")
        s[:, 2] = wrap_angle(s[:, 2])
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def __len__(self):
        return HORIZON

    @property
    def xy(self):
        return self.states[:, :2]

    x = property(lambda self: self.states[:, 0])
    y = property(lambda self: self.states[:, 1])
    theta = property(lambda self: self.states[:, 2])
    kappa = property(lambda self: self.states[:, 3])
    v = property(lambda self: self.states[:, 4])
    a = property(lambda self: self.states[:, 5])

    def state(self, k):
        return SdvState.from_array(self.states[k])


@dataclass(frozen=True, eq=False)
class RoutePolyline:
    """Route centerline with one integer lane id per segment.

    A point at lateral offset ``d`` (positive = left) from a segment with
    lane id ``L`` lies in lane ``L + round(d / lane_width)``.
    """

    points: np.ndarray
    lane_ids: np.ndarray = None
    lane_width: float = 3.5

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise DomainError("route needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-9):
            raise DomainError("route has degenerate segments")
        ids = np.zeros(len(pts) - 1, dtype=np.int64) if self.lane_ids is None else np.asarray(self.lane_ids)
        if len(ids) == len(pts):
            ids = ids[:-1]
        if len(ids) != len(pts) - 1:
            raise DomainError("need one lane id per segment (or per point)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lane_ids", ids.astype(np.int64))
        seg_heading = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        # vertex headings average the adjacent segments so offsets stay continuous
        vtx_heading = np.concatenate([seg_heading[:1], (seg_heading[:-1] + seg_heading[1:]) / 2,
                                      seg_heading[-1:]])
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_seg_heading", seg_heading)
        object.__setattr__(self, "_vtx_heading", vtx_heading)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg_len)]))

    @property
    def length(self):
        return float(self._cum[-1])

    def project(self, xy):
        """Arc length ``s``, signed lateral offset ``d`` and segment index of point(s)."""
        p = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        a = self.points[:-1]
        seg = self.points[1:] - a
        rel = p[:, None, :] - a[None]
        t = np.einsum("nkj,kj->nk", rel, seg) / self._seg_len ** 2
        # the end segments extend to infinity
        t_lo = np.where(np.arange(len(seg)) == 0, -np.inf, 0.0)
        t_hi = np.where(np.arange(len(seg)) == len(seg) - 1, np.inf, 1.0)
        t_c = np.clip(t, t_lo, t_hi)
        foot = a[None] + t_c[..., None] * seg[None]
        dist = np.hypot(*(p[:, None, :] - foot).transpose(2, 0, 1))
        k = np.argmin(dist, axis=1)
        n = np.arange(len(p))
        cross = seg[k, 0] * rel[n, k, 1] - seg[k, 1] * rel[n, k, 0]
        d = np.sign(cross) * dist[n, k]
        s = self._cum[k] + t_c[n, k] * self._seg_len[k]
        return s, d, k

    def distance(self, xy):
        """Euclidean distance from point(s) to the nearest point on the (finite) polyline."""
        p = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        a = self.points[:-1]
        seg = self.points[1:] - a
        rel = p[:, None, :] - a[None]
        t_raw = np.einsum("nkj,kj->nk", rel, seg) / self._seg_len ** 2
        t = np.clip(t_raw, 0.0, 1.0)
        foot = a[None] + t[..., None] * seg[None]
        to_foot = np.hypot(*(p[:, None, :] - foot).transpose(2, 0, 1))
        # perpendicular distance via the cross product is exact for points on the segment
        perp = np.abs(seg[None, :, 0] * rel[..., 1] - seg[None, :, 1] * rel[..., 0]) / self._seg_len
        return np.min(np.where(t_raw == t, perp, to_foot), axis=1)

    def _locate(self, s):
        s = np.asarray(s, dtype=np.float64)
        k = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        return k, (s - self._cum[k]) / self._seg_len[k]

    def point_at(self, s):
        """Centerline point at arc length ``s`` (linear extrapolation past the ends)."""
        k, t = self._locate(s)
        a = self.points[k]
        return a + t[..., None] * (self.points[k + 1] - a)

    def heading_at(self, s):
        k, t = self._locate(s)
        t = np.clip(t, 0.0, 1.0)
        return self._vtx_heading[k] * (1 - t) + self._vtx_heading[k + 1] * t

    def lane_at(self, s):
        k, _ = self._locate(s)
        return self.lane_ids[k]


@dataclass(frozen=True)
class SamplerConfig:
    lateral_offsets: tuple = (-3.0, -1.5, 0.0, 1.5, 3.0)
    accel_profiles: tuple = (-4.0, -2.0, 0.0, 1.0, 2.0)
    kappa_max: float = 0.2
    dt: float = DT
    blend_fraction: float = 0.6     # share of the horizon travel spent reaching the offset

    def __post_init__(self):
        if not self.lateral_offsets or not self.accel_profiles:
            raise ConfigurationError("sampler needs at least one offset and one profile")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.kappa_max < 0:
            raise ConfigurationError("kappa_max must be non-negative")
        if not 0 < self.blend_fraction <= 1:
            raise ConfigurationError("blend_fraction must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class Candidate:
    trajectory: Trajectory
    offset: float
    profile: float
    feasible: bool
    index: int = field(default=0)


def _hermite(tau, d0, m0, d1):
    """Cubic from ``d0`` with slope ``m0`` (per unit tau) to ``d1`` with zero slope."""
    t2, t3 = tau * tau, tau * tau * tau
    value = (2 * t3 - 3 * t2 + 1) * d0 + (t3 - 2 * t2 + tau) * m0 + (3 * t2 - 2 * t3) * d1
    slope = (6 * t2 - 6 * tau) * d0 + (3 * t2 - 4 * tau + 1) * m0 + (6 * tau - 6 * t2) * d1
    return value, slope


def _rollout_speed(v0, a, dt, n=HORIZON):
    """Speeds ``v[0..n]`` under ``v[k+1] = max(0, v[k] + a*dt)`` and travel ``sigma[0..n]``."""
    v = np.empty(n + 1)
    v[0] = v0
    for k in range(n):
        v[k + 1] = max(0.0, v[k] + a * dt)
    sigma = np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])
    return v, sigma


def _build_candidate(ego, route, s0, d0, slope0, offset, profile, cfg, n_dense=96):
    v, sigma = _rollout_speed(ego.v, profile, cfg.dt)
    v_next = max(0.0, v[-1] + profile * cfg.dt)
    accel = np.diff(np.append(v, v_next))[1:] / cfg.dt
    L = sigma[-1]
    if L > 1e-9:
        # dense along route arc length; 1.5x covers path stretch from lateral motion
        s = s0 + np.linspace(0.0, 1.5 * L + 1.0, n_dense)
        Lb = cfg.blend_fraction * L
        tau = np.clip((s - s0) / Lb, 0.0, 1.0)
        d, dd_tau = _hermite(tau, d0, slope0 * Lb, offset)
        dd_ds = np.where((s - s0) <= Lb, dd_tau / Lb, 0.0)
        base = route.point_at(s)
        h = route.heading_at(s)
        normal = np.stack([-np.sin(h), np.cos(h)], axis=-1)
        path = base + d[:, None] * normal
        heading = h + np.arctan(dd_ds)
        arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(path, axis=0).T))])
        xs = np.interp(sigma, arc, path[:, 0])
        ys = np.interp(sigma, arc, path[:, 1])
        th = np.interp(sigma, arc, np.unwrap(heading))
    else:
        start = route.point_at(s0) + d0 * np.array([-np.sin(route.heading_at(s0)),
                                                     np.cos(route.heading_at(s0))])
        xs = np.full(HORIZON + 1, start[0])
        ys = np.full(HORIZON + 1, start[1])
        th = np.full(HORIZON + 1, route.heading_at(s0) + np.arctan(slope0))
    ds = np.diff(sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(ds > 1e-9, wrap_angle(np.diff(th)) / ds, 0.0)
    states = np.column_stack([xs[1:], ys[1:], th[1:], kappa, v[1:], accel])
    traj = Trajectory(states, cfg.dt)
    return traj, bool(is_feasible(traj, cfg.kappa_max))


def kinematic_residuals(traj):
    """``|p[t+1] - p[t] - v[t]*dt*(cos th[t], sin th[t])|`` for consecutive states."""
    s = traj.states
    step = s[:-1, 4, None] * traj.dt * np.stack([np.cos(s[:-1, 2]), np.sin(s[:-1, 2])], axis=-1)
    return np.hypot(*(s[1:, :2] - s[:-1, :2] - step).T)


def is_feasible(traj, kappa_max, tol=1e-9):
    if np.any(np.abs(traj.kappa) > kappa_max + tol) or np.any(traj.v < 0):
        return False
    bound = CONSISTENCY_TOL * traj.v[:-1] * traj.dt + tol
    return bool(np.all(kinematic_residuals(traj) <= bound))


def sample_candidates(ego, route, cfg=None, max_route_distance=10.0):
    """Every (offset, profile) candidate in sampler order, feasible or not."""
    cfg = cfg or SamplerConfig()
    if route is None or len(route.points) < 2:
        raise DomainError("empty route")
    s_arr, d_arr, _ = route.project([ego.x, ego.y])
    s0, d0 = float(s_arr[0]), float(d_arr[0])
    if abs(d0) > max_route_distance:
        raise DomainError(f"ego is {abs(d0):.1f} m from the route")
    rel = wrap_angle(ego.theta - float(route.heading_at(s0)))
    slope0 = float(np.tan(np.clip(rel, -1.2, 1.2)))
    out = []
    for offset in cfg.lateral_offsets:
        for profile in cfg.accel_profiles:
            traj, ok = _build_candidate(ego, route, s0, d0, slope0, offset, profile, cfg)
            out.append(Candidate(traj, offset, profile, ok, len(out)))
    return out


def sample_trajectories(ego, route, cfg=None):
    """Feasible candidates in sampler order (offset-major, profile-minor)."""
    return [c.trajectory for c in sample_candidates(ego, route, cfg) if c.feasible]


def _check_horizon(a, b):
    if a.states.shape != b.states.shape:
        raise DomainError("trajectories differ in horizon")


def l1_distance(a, b, full_state=False):
    """Sum over states of the L1 norm of the position (or full-state) difference."""
    _check_horizon(a, b)
    cols = slice(None) if full_state else slice(0, 2)
    return float(np.sum(np.abs(a.states[:, cols] - b.states[:, cols])))


def lane_sequence(traj, route):
    s, d, _ = route.project(traj.xy)
    return route.lane_at(s) + np.floor(d / route.lane_width + 0.5).astype(np.int64)


def lane_change_count(traj, route):
    lanes = lane_sequence(traj, route)
    return int(np.count_nonzero(np.diff(lanes)))


# -- file formats -------------------------------------------------------------

def read_route(path):
    """Route file: one ``x y lane_id`` line per point; ``#`` starts a comment."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'x y lane_id'")
        rows.append((float(parts[0]), float(parts[1]), int(parts[2])))
    if len(rows) < 2:
        raise DomainError(f"{path}: route needs at least two points")
    arr = np.array(rows)
    return RoutePolyline(arr[:, :2], arr[:-1, 2].astype(int))


def write_route(path, route):
    ids = np.append(route.lane_ids, route.lane_ids[-1])
    lines = [f"{x!r} {y!r} {int(i)}" for (x, y), i in zip(route.points.tolist(), ids)]
    Path(path).write_text("\n".join(lines) + "\n")


def format_float(v):
    # repr round-trips exactly
    return repr(float(v))


def trajectory_to_csv(traj):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATE_FIELDS)
    for row in traj.states:
        w.writerow([format_float(v) for v in row])
    return buf.getvalue()


def write_trajectory_csv(path, traj):
    Path(path).write_text(trajectory_to_csv(traj))


def read_trajectory_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != STATE_FIELDS:
            raise FormatError(f"{path}: header must be {','.join(STATE_FIELDS)}")
        rows = [[float(r[k]) for k in STATE_FIELDS] for r in reader]
    return Trajectory(np.array(rows))
