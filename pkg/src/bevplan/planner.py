"""Probability-weighted trajectory cost and minimum-cost selection.

The cost of a trajectory is linear in its weights, ``f = w . phi``, where
``phi`` stacks the per-class map accumulators and the route/comfort terms in
:data:`FEATURE_NAMES` order.
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, DomainError, FormatError
from .semgrid import DRIVABLE, PEDESTRIAN, VEHICLE, to_frame
from .trajectory import SamplerConfig, lane_change_count, sample_candidates
from .validation import check_nonnegative

MAP_FEATURES = ("vehicle", "pedestrian", "nondrivable")
OTHER_FEATURES = ("route", "lanechange", "accel", "jerk", "latacc", "progress")
FEATURE_NAMES = MAP_FEATURES + OTHER_FEATURES
N_FEATURES = len(FEATURE_NAMES)
DEFAULT_FOOTPRINT = (4.5, 2.0)
# closed-loop lookups: physical footprint plus a margin covering travel between 0.5 s states
PLANNING_FOOTPRINT = (8.5, 3.0)


@dataclass(frozen=True)
class CostWeights:
    w_vehicle: float = 1.0
    w_pedestrian: float = 1.0
    w_nondrivable: float = 1.0
    w_route: float = 1.0
    w_lanechange: float = 1.0
    w_accel: float = 1.0
    w_jerk: float = 1.0
    w_latacc: float = 1.0
    w_progress: float = 1.0

    def __post_init__(self):
        check_nonnegative(self.as_array(), name="cost weights")

    def as_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (N_FEATURES,):
            raise DomainError(f"expected {N_FEATURES} weights, got shape {arr.shape}")
        return cls(*map(float, arr))

    def scaled(self, lam):
        return CostWeights.from_array(lam * self.as_array())

    def save(self, path):
        lines = [f"{k}={v!r}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        """Read ``key=value`` lines; unknown keys are an error, missing keys keep defaults."""
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in {f.name for f in fields(cls)}:
                raise FormatError(f"{path}:{lineno}: bad weights line {line!r}")
            values[key] = float(val)
        return cls(**values)


# Hand-set weights for closed-loop driving: collisions and leaving the road
# dominate every comfort or route term.
DRIVING_WEIGHTS = CostWeights(
    w_vehicle=40.0, w_pedestrian=40.0, w_nondrivable=20.0, w_route=1.0, w_lanechange=1.0,
    w_accel=1.0, w_jerk=0.2, w_latacc=1.0, w_progress=0.1,
)


@dataclass(frozen=True)
class ComfortThresholds:
    a_max: float = 3.0
    j_max: float = 2.0
    latacc_max: float = 3.0
    v_target: float = 8.0

    def __post_init__(self):
        if min(self.a_max, self.j_max, self.latacc_max) <= 0 or self.v_target < 0:
            raise ConfigurationError("comfort thresholds must be positive")


# -- map cost ------------------------------------------------------------------

def footprint_cells(spec, x, y, theta, length, width):
    """Lattice cells covered by rectangles centered at ``(x[k], y[k])`` in the grid frame.

    A cell is covered when its center lies in the (closed) rectangle; the cell
    holding the rectangle center is always covered.  Returns index arrays
    ``i, j`` of shape ``(n, m)`` and a boolean ``covered`` mask of the same
    shape; indices may fall outside the grid.
    """
    x, y, theta = map(np.atleast_1d, (x, y, theta))
    c = spec.cell_size
    r = 0.5 * np.hypot(length, width)
    m = int(np.ceil(2 * r / c)) + 2
    i0, j0 = spec.cell_index(x - r, y - r)
    off = np.arange(m)
    I = i0[:, None, None] + off[None, :, None]
    J = j0[:, None, None] + off[None, None, :]
    I, J = np.broadcast_arrays(I, J)
    cx = spec.x_min + (I + 0.5) * c
    cy = spec.y_min + (J + 0.5) * c
    dx, dy = cx - x[:, None, None], cy - y[:, None, None]
    cs, sn = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    covered = (np.abs(dx * cs + dy * sn) <= length / 2) & (np.abs(-dx * sn + dy * cs) <= width / 2)
    ci, cj = spec.cell_index(x, y)
    covered |= (I == ci[:, None, None]) & (J == cj[:, None, None])
    n = len(x)
    return I.reshape(n, -1), J.reshape(n, -1), covered.reshape(n, -1)


def map_cost_features(traj, maps, footprint=DEFAULT_FOOTPRINT, reduction="max"):
    """Per-class map accumulators over the horizon.

    State ``k`` (t0+k) reads frame ``k`` of ``maps``.  For each state the
    footprint's covered cells are reduced (max by default) per class in
    (vehicle, pedestrian, non-drivable = 1 - drivable).  Covered cells outside
    the grid count as non-drivable with no agents.

    Returns
    -------
    acc : ndarray of shape (3,)
    left_grid : bool
        True when any covered cell fell outside the grid.
    """
    if reduction not in ("max", "mean"):
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    n = len(traj.states)
    if len(maps.values) < n + 1:
        raise DomainError(f"need {n + 1} map frames, got {len(maps.values)}")
    spec = maps.spec
    gx, gy, gth = to_frame(maps.pose, traj.x, traj.y, traj.theta)
    I, J, covered = footprint_cells(spec, gx, gy, gth, *footprint)
    inside = spec.in_range(I, J)
    Ic, Jc = np.clip(I, 0, spec.nx - 1), np.clip(J, 0, spec.ny - 1)
    frames = np.arange(1, n + 1)[:, None]
    vals = maps.values[frames, Ic, Jc]            # (n, m, 4)
    per_class = np.stack([
        np.where(inside, vals[..., VEHICLE], 0.0),
        np.where(inside, vals[..., PEDESTRIAN], 0.0),
        np.where(inside, 1.0 - vals[..., DRIVABLE], 1.0),
    ], axis=-1)
    mask = covered[..., None]
    if reduction == "max":
        step = np.max(np.where(mask, per_class, -np.inf), axis=1)
    else:
        step = np.sum(np.where(mask, per_class, 0.0), axis=1) / covered.sum(axis=1)[:, None]
    left_grid = bool(np.any(covered & ~inside))
    return np.sum(step, axis=0), left_grid


def comfort_route_features(traj, route, thresholds=None):
    """Route end-distance, lane changes and hinge excesses, in :data:`OTHER_FEATURES` order."""
    th = thresholds or ComfortThresholds()
    end_dist = float(route.distance(traj.xy[-1])[0])
    lanes = lane_change_count(traj, route)
    jerk = np.diff(traj.a) / traj.dt
    latacc = traj.kappa * traj.v ** 2
    hinge = lambda x, lim: float(np.sum(np.maximum(np.abs(x) - lim, 0.0)))
    progress = float(np.sum(np.maximum(th.v_target - traj.v, 0.0)))
    return np.array([end_dist, lanes, hinge(traj.a, th.a_max), hinge(jerk, th.j_max),
                     hinge(latacc, th.latacc_max), progress])


def cost_features(traj, maps, route, thresholds=None, footprint=DEFAULT_FOOTPRINT,
                  reduction="max"):
    """Full feature vector ``phi`` in :data:`FEATURE_NAMES` order."""
    acc, _ = map_cost_features(traj, maps, footprint, reduction)
    return np.concatenate([acc, comfort_route_features(traj, route, thresholds)])


def total_cost(features, w):
    w = w.as_array() if isinstance(w, CostWeights) else np.asarray(w, dtype=np.float64)
    return np.asarray(features, dtype=np.float64) @ w


def argmin_cost(costs, rtol=1e-12):
    """Index of the minimal cost; near-ties go to the lowest index."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0:
        raise DomainError("no candidates to select from")
    best = costs.min()
    return int(np.flatnonzero(costs <= best + rtol * max(1.0, abs(best)))[0])


def select_best(candidates, w):
    """Pick the minimal-cost ``(trajectory, features)`` pair.

    Returns the winning index and trajectory.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("empty candidate set")
    phi = np.array([f for _, f in candidates])
    k = argmin_cost(total_cost(phi, w))
    return k, candidates[k][0]


@dataclass(frozen=True, eq=False)
class PlanResult:
    trajectory: object
    index: int              # into ``candidates``
    candidates: list        # every sampled Candidate, feasible or not
    features: np.ndarray    # (n_candidates, N_FEATURES); NaN rows for infeasible
    costs: np.ndarray

    @property
    def feasible(self):
        return np.array([c.feasible for c in self.candidates])


class CostMapPlanner(BaseEstimator):
    """Samples candidates, scores them against forecast maps and keeps the cheapest.

    Parameters
    ----------
    weights : CostWeights, default=None
        ``None`` means all-ones.
    thresholds : ComfortThresholds, default=None
    sampler : SamplerConfig, default=None
    footprint : tuple of float, default=(4.5, 2.0)
        SDV length and width used for map lookups.
    reduction : {"max", "mean"}, default="max"
    """

    def __init__(self, weights=None, thresholds=None, sampler=None,
                 footprint=DEFAULT_FOOTPRINT, reduction="max"):
        self.weights = weights
        self.thresholds = thresholds
        self.sampler = sampler
        self.footprint = footprint
        self.reduction = reduction

    def featurize(self, candidates, maps, route):
        phi = np.full((len(candidates), N_FEATURES), np.nan)
        for k, cand in enumerate(candidates):
            if cand.feasible:
                phi[k] = cost_features(cand.trajectory, maps, route, self.thresholds,
                                       self.footprint, self.reduction)
        return phi

    def plan(self, ego, route, maps):
        """Best feasible trajectory, or ``None`` in ``PlanResult.trajectory`` if none is feasible."""
        candidates = sample_candidates(ego, route, self.sampler or SamplerConfig())
        phi = self.featurize(candidates, maps, route)
        costs = total_cost(np.nan_to_num(phi, nan=0.0), self.weights or CostWeights())
        costs[np.isnan(phi[:, 0])] = np.inf
        feasible = np.isfinite(costs)
        if not feasible.any():
            return PlanResult(None, -1, candidates, phi, costs)
        k = argmin_cost(np.where(feasible, costs, np.inf))
        return PlanResult(candidates[k].trajectory, k, candidates, phi, costs)
