"""Probabilistic egocentric semantic grids and the forecasters that produce them.

Grids are stored as arrays of shape ``(nx, ny, 4)`` with classes in
:data:`CLASSES` order; sequences add a leading frame axis of length 11
(``t0 .. t0+10`` at 0.5 s).  Every grid carries the world pose of the ego
frame it is expressed in, so planners can look up world-frame trajectories.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from .exceptions import DomainError
from .geometry import GridSpec
from .validation import as_float_array

CLASSES = ("drivable", "lane", "vehicle", "pedestrian")
DRIVABLE, LANE, VEHICLE, PEDESTRIAN = range(4)
N_FORECAST_FRAMES = 11
FRAME_DT = 0.5
AGENT_CLASSES = {"vehicle": VEHICLE, "pedestrian": PEDESTRIAN}


def _check_probs(values):
    values = as_float_array(values, name="probabilities")
    if np.any(values < 0) or np.any(values > 1):
        raise DomainError("probabilities must lie in [0, 1]")
    return values


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    values: np.ndarray                      # (nx, ny, 4)
    spec: GridSpec = field(default_factory=GridSpec)
    pose: tuple = (0.0, 0.0, 0.0)           # world pose of the grid frame

    def __post_init__(self):
        v = _check_probs(self.values)
        if v.shape != (self.spec.nx, self.spec.ny, len(CLASSES)):
            raise DomainError(f"grid values {v.shape} do not match spec {self.spec.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class SemanticGridSeq:
    values: np.ndarray                      # (11, nx, ny, 4)
    spec: GridSpec = field(default_factory=GridSpec)
    pose: tuple = (0.0, 0.0, 0.0)
    frame_dt: float = FRAME_DT

    def __post_init__(self):
        v = _check_probs(self.values)
        if v.ndim != 4 or v.shape[0] != N_FORECAST_FRAMES:
            raise DomainError(f"expected {N_FORECAST_FRAMES} frames, got shape {v.shape}")
        if v.shape[1:] != (self.spec.nx, self.spec.ny, len(CLASSES)):
            raise DomainError(f"frame shape {v.shape[1:]} does not match spec")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, t):
        return SemanticGrid(self.values[t], self.spec, self.pose)


# -- world model -------------------------------------------------------------

@dataclass(frozen=True)
class Agent:
    cls: str
    x: float
    y: float
    theta: float
    speed: float
    length: float
    width: float

    def __post_init__(self):
        if self.cls not in AGENT_CLASSES:
            raise DomainError(f"unknown agent class {self.cls!r}")
        if not (self.length > 0 and self.width > 0):
            raise DomainError("agent footprint must have positive dims")

    def at(self, t):
        """Constant-velocity pose after ``t`` seconds."""
        return replace(
            self,
            x=self.x + self.speed * np.cos(self.theta) * t,
            y=self.y + self.speed * np.sin(self.theta) * t,
        )

    def corners(self):
        return rect_corners(self.x, self.y, self.theta, self.length, self.width)


@dataclass(frozen=True, eq=False)
class WorldState:
    drivable: tuple = ()            # world-frame polygons, each (N, 2)
    lanes: tuple = ()
    agents: tuple = ()
    ego_pose: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "drivable", tuple(np.asarray(p, float) for p in self.drivable))
        object.__setattr__(self, "lanes", tuple(np.asarray(p, float) for p in self.lanes))
        object.__setattr__(self, "agents", tuple(self.agents))
        for poly in self.drivable + self.lanes:
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise DomainError("polygons need at least three 2-D vertices")

    def advanced(self, t):
        return replace(self, agents=tuple(a.at(t) for a in self.agents))


def rect_corners(x, y, theta, length, width):
    c, s = np.cos(theta), np.sin(theta)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ np.array([[c, s], [-s, c]]) + [x, y]


def points_in_polygon(px, py, poly):
    """Even-odd rule; ``px``/``py`` broadcast together."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = (yi > py) != (yj > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
        inside ^= crosses & (px < x_cross)
        xj, yj = xi, yi
    return inside


def points_in_rect(px, py, x, y, theta, length, width):
    dx, dy = px - x, py - y
    c, s = np.cos(theta), np.sin(theta)
    return (np.abs(dx * c + dy * s) <= length / 2) & (np.abs(-dx * s + dy * c) <= width / 2)


def to_frame(pose, x, y, theta=None):
    """World coordinates -> coordinates in the frame whose world pose is ``pose``."""
    ox, oy, oth = pose
    c, s = np.cos(oth), np.sin(oth)
    dx, dy = np.asarray(x) - ox, np.asarray(y) - oy
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    if theta is None:
        return lx, ly
    return lx, ly, np.asarray(theta) - oth


def to_world(pose, x, y):
    ox, oy, oth = pose
    c, s = np.cos(oth), np.sin(oth)
    return ox + c * x - s * y, oy + s * x + c * y


# -- rasterization -----------------------------------------------------------

def polygon_bounds(polys, pose=(0.0, 0.0, 0.0)):
    """Axis-aligned ``(x_lo, y_lo, x_hi, y_hi)`` of each polygon in the frame with world pose ``pose``."""
    sizes = [len(p) for p in polys]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    verts = np.concatenate(polys)
    gx, gy = to_frame(pose, verts[:, 0], verts[:, 1])
    return np.column_stack([np.minimum.reduceat(gx, starts), np.minimum.reduceat(gy, starts),
                            np.maximum.reduceat(gx, starts), np.maximum.reduceat(gy, starts)])


def rasterize_polygons(polys, spec, pose, supersample=1):
    """Coverage of world-frame polygons on the grid (cell-center test when ``supersample=1``).

    Each polygon is tested only against the cells inside its grid-frame bounding box.
    """
    out = np.zeros(spec.shape)
    if not polys:
        return out
    k = supersample
    offs = (np.arange(k) + 0.5) / k * spec.cell_size
    hit = np.zeros(spec.shape + (k * k,), dtype=bool)
    bounds = polygon_bounds(polys, pose)
    i0, j0 = spec.cell_index(bounds[:, 0], bounds[:, 1])
    i1, j1 = spec.cell_index(bounds[:, 2], bounds[:, 3])
    i0, j0 = np.maximum(i0, 0), np.maximum(j0, 0)
    i1, j1 = np.minimum(i1, spec.nx - 1), np.minimum(j1, spec.ny - 1)
    for n in np.flatnonzero((i0 <= i1) & (j0 <= j1)):
        xs = (spec.x_min + np.arange(i0[n], i1[n] + 1) * spec.cell_size)[:, None] + offs
        ys = (spec.y_min + np.arange(j0[n], j1[n] + 1) * spec.cell_size)[:, None] + offs
        shape = (len(xs), len(ys), k * k)
        X = np.broadcast_to(xs[:, None, :, None], shape[:2] + (k, k)).reshape(shape)
        Y = np.broadcast_to(ys[None, :, None, :], shape[:2] + (k, k)).reshape(shape)
        wx, wy = to_world(pose, X, Y)
        hit[i0[n]:i1[n] + 1, j0[n]:j1[n] + 1] |= points_in_polygon(wx, wy, polys[n])
    return hit.mean(axis=-1)


def rasterize_agent(agent, spec, pose, supersample=1):
    """Footprint coverage of one agent; the cell holding its center is always marked."""
    out = np.zeros(spec.shape)
    ax, ay, ath = to_frame(pose, agent.x, agent.y, agent.theta)
    r = 0.5 * np.hypot(agent.length, agent.width)
    i0, j0 = spec.cell_index(ax - r, ay - r)
    i1, j1 = spec.cell_index(ax + r, ay + r)
    i0, j0 = max(int(i0), 0), max(int(j0), 0)
    i1, j1 = min(int(i1), spec.nx - 1), min(int(j1), spec.ny - 1)
    if i0 <= i1 and j0 <= j1:
        k = supersample
        offs = (np.arange(k) + 0.5) / k * spec.cell_size
        xs = (spec.x_min + np.arange(i0, i1 + 1) * spec.cell_size)[:, None] + offs
        ys = (spec.y_min + np.arange(j0, j1 + 1) * spec.cell_size)[:, None] + offs
        X = xs[:, None, :, None]
        Y = ys[None, :, None, :]
        inside = points_in_rect(X, Y, ax, ay, ath, agent.length, agent.width)
        out[i0:i1 + 1, j0:j1 + 1] = inside.mean(axis=(2, 3))
    ci, cj = spec.cell_index(ax, ay)
    if spec.in_range(ci, cj):
        out[ci, cj] = 1.0
    return out


def rasterize_world(world, spec, times, supersample=1, blur_sigma=0.0):
    """Semantic frames for ``world`` at each time offset in ``times``, in the t0 ego frame."""
    pose = world.ego_pose
    static = np.zeros(spec.shape + (2,))
    static[..., DRIVABLE] = rasterize_polygons(world.drivable, spec, pose, supersample)
    static[..., LANE] = rasterize_polygons(world.lanes, spec, pose, supersample)
    frames = np.zeros((len(times),) + spec.shape + (len(CLASSES),))
    frames[..., :2] = static
    for k, t in enumerate(times):
        for agent in world.agents:
            layer = AGENT_CLASSES[agent.cls]
            np.maximum(frames[k, :, :, layer], rasterize_agent(agent.at(t), spec, pose, supersample),
                       out=frames[k, :, :, layer])
    if blur_sigma > 0:
        frames = gaussian_filter(frames, sigma=(0, blur_sigma, blur_sigma, 0), mode="nearest")
    return np.clip(frames, 0.0, 1.0)


# -- forecasters -------------------------------------------------------------

def oracle_forecast(world, spec=None, horizon=N_FORECAST_FRAMES, dt=FRAME_DT,
                    blur_sigma=0.0, supersample=1):
    """Ground-truth future maps: agents roll out at constant velocity."""
    spec = spec or GridSpec()
    frames = rasterize_world(world, spec, np.arange(horizon) * dt, supersample, blur_sigma)
    return SemanticGridSeq(frames, spec, tuple(world.ego_pose), dt)


def persistence_forecast(current, horizon=N_FORECAST_FRAMES):
    """Repeat the current grid for every future frame."""
    values = np.repeat(current.values[None], horizon, axis=0)
    return SemanticGridSeq(values, current.spec, current.pose)


class OracleForecaster:
    """Callable forecaster wrappers used by the simulator and CLI."""

    name = "oracle"

    def __init__(self, spec=None, blur_sigma=0.0, supersample=1):
        self.spec = spec or GridSpec()
        self.blur_sigma = blur_sigma
        self.supersample = supersample

    def __call__(self, world):
        return oracle_forecast(world, self.spec, blur_sigma=self.blur_sigma,
                               supersample=self.supersample)


class PersistenceForecaster(OracleForecaster):
    name = "persistence"

    def __call__(self, world):
        now = rasterize_world(world, self.spec, [0.0], self.supersample, self.blur_sigma)[0]
        return persistence_forecast(SemanticGrid(now, self.spec, tuple(world.ego_pose)))


FORECASTERS = {"oracle": OracleForecaster, "persistence": PersistenceForecaster}


# -- recurrent logits update ---------------------------------------------------

def downsample2x(x):
    """2x average pooling over the two leading (spatial) axes."""
    X, Y = x.shape[:2]
    if X % 2 or Y % 2:
        raise DomainError(f"cannot halve odd grid {X}x{Y}")
    return x.reshape(X // 2, 2, Y // 2, 2, *x.shape[2:]).mean(axis=(1, 3))


def upsample2x(x):
    """2x bilinear interpolation with half-pixel centers and edge clamping."""
    def interp_axis(a, axis):
        n = a.shape[axis]
        src = np.clip((np.arange(2 * n) + 0.5) / 2 - 0.5, 0, n - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        w = src - lo
        shape = [1] * a.ndim
        shape[axis] = -1
        w = w.reshape(shape)
        return np.take(a, lo, axis=axis) * (1 - w) + np.take(a, hi, axis=axis) * w

    return interp_axis(interp_axis(x, 0), 1)


class LinearUpdateCell:
    """Per-cell linear map on ``[fused, prev_logits_down]`` followed by 2x upsampling.

    ``weights`` has one entry per fused channel plus one for the downsampled
    logits; ``bias`` is a scalar.
    """

    def __init__(self, weights, bias=0.0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)

    def __call__(self, fused, prev_down):
        stacked = np.concatenate([fused, prev_down[..., None]], axis=-1)
        return upsample2x(stacked @ self.weights + self.bias)


def zero_cell(fused, prev_down):
    return np.zeros((2 * prev_down.shape[0], 2 * prev_down.shape[1]))


def recurrent_update(prev, fused, cell):
    """One recurrent step: each class's logits plus the cell's correction.

    ``prev`` is ``(X, Y, C)``; ``fused`` is ``(X/2, Y/2, C_fused)``; ``cell``
    maps ``(fused, prev[..., c] downsampled)`` to an ``(X, Y)`` correction.
    """
    prev = as_float_array(prev, ndim=3, name="logits")
    fused = as_float_array(fused, ndim=3, name="fused features")
    out = np.empty_like(prev)
    for c in range(prev.shape[-1]):
        delta = np.asarray(cell(fused, downsample2x(prev[..., c])), dtype=np.float64)
        if delta.shape != prev.shape[:2]:
            raise DomainError(f"cell returned {delta.shape}, expected {prev.shape[:2]}")
        out[..., c] = prev[..., c] + delta
    return out


def rollout_logits(initial, fused, cell, steps=N_FORECAST_FRAMES - 1):
    """Logits for ``t0 .. t0+steps``, starting from ``initial`` at t0."""
    logits = [np.asarray(initial, dtype=np.float64)]
    for _ in range(steps):
        logits.append(recurrent_update(logits[-1], fused, cell))
    return np.stack(logits)


def logits_to_probs(logits):
    """Independent per-class probabilities (two-way softmax against a zero logit)."""
    return expit(as_float_array(logits, name="logits"))
