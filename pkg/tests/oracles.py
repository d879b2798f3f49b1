"""Slow, independent reference computations shared by the module and acceptance tests."""

import math

import numpy as np
from shapely.geometry import Polygon

from bevplan.geometry import GridSpec
from bevplan.semgrid import SemanticGridSeq
from bevplan.trajectory import HORIZON, Trajectory


def footprint_steps(traj, maps, length, width):
    """Per-step (vehicle, pedestrian, non-drivable) maxima by scanning every grid cell.

    Assumes the footprints stay inside the grid.
    """
    spec = maps.spec
    px, py, pth = maps.pose
    c, s = np.cos(pth), np.sin(pth)
    cx, cy = np.meshgrid(spec.x_min + (np.arange(spec.nx) + 0.5) * spec.cell_size,
                         spec.y_min + (np.arange(spec.ny) + 0.5) * spec.cell_size, indexing="ij")
    out = np.zeros((HORIZON, 3))
    for k, (x, y, th) in enumerate(traj.states[:, :3]):
        # world -> grid frame
        gx = c * (x - px) + s * (y - py)
        gy = -s * (x - px) + c * (y - py)
        gth = th - pth
        along = (cx - gx) * np.cos(gth) + (cy - gy) * np.sin(gth)
        across = -(cx - gx) * np.sin(gth) + (cy - gy) * np.cos(gth)
        mask = (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)
        mask[int(np.floor((gx - spec.x_min) / spec.cell_size)),
             int(np.floor((gy - spec.y_min) / spec.cell_size))] = True
        frame = maps.values[k + 1]
        out[k] = [frame[..., 2][mask].max(), frame[..., 3][mask].max(), (1 - frame[..., 0])[mask].max()]
    return out


def random_maps(rng, spec=None, pose=None):
    spec = spec or GridSpec(-16.0, -16.0, 0.5, 64, 64)
    pose = tuple(rng.uniform(-3, 3, 3)) if pose is None else pose
    return SemanticGridSeq(rng.uniform(size=(11, spec.nx, spec.ny, 4)), spec, pose)


def random_inside_traj(rng, maps, margin=4.0):
    """A trajectory whose states stay ``margin`` meters inside the grid, in world coordinates."""
    spec = maps.spec
    gx = rng.uniform(spec.x_min + margin, spec.x_min + spec.nx * spec.cell_size - margin, HORIZON)
    gy = rng.uniform(spec.y_min + margin, spec.y_min + spec.ny * spec.cell_size - margin, HORIZON)
    px, py, pth = maps.pose
    c, s = np.cos(pth), np.sin(pth)
    states = np.zeros((HORIZON, 6))
    states[:, 0] = px + c * gx - s * gy
    states[:, 1] = py + s * gx + c * gy
    states[:, 2] = rng.uniform(-np.pi, np.pi, HORIZON)
    states[:, 4] = rng.uniform(0, 10, HORIZON)
    return Trajectory(states)


def bce_loop(gt, pred, eps=1e-7):
    total = 0.0
    T, X, Y, C = gt.shape
    for t in range(T):
        for c in range(C):
            for i in range(X):
                for j in range(Y):
                    p = min(max(pred[t, i, j, c], eps), 1 - eps)
                    y = gt[t, i, j, c]
                    total -= y * math.log(p) + (1 - y) * math.log(1 - p)
    return total


def l1_loop(a, b):
    total = 0.0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        total += abs(x - y)
    return total


def rect_polygon(corners):
    return Polygon([tuple(p) for p in corners])


def random_example(rng, n=None):
    """Training example with random features and random candidate/human positions."""
    from bevplan.learning import TrainingExample
    from bevplan.planner import N_FEATURES

    n = n or int(rng.integers(2, 9))
    xy = lambda: np.column_stack([rng.normal(scale=2, size=(HORIZON, 2)), np.zeros((HORIZON, 4))])
    cands = [Trajectory(xy()) for _ in range(n)]
    return TrainingExample(cands, rng.uniform(0, 5, (n, N_FEATURES)), Trajectory(xy()),
                           rng.uniform(0, 5, N_FEATURES))


def central_difference(fn, w, h=1e-5):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fn(w + e) - fn(w - e)) / (2 * h)
    return g


def clear_of_ties(ex, w, gap=1e-3):
    """Whether the maximizing hinge bracket (including the zero floor) is unique by ``gap``."""
    b = ex.human_features @ w - ex.features @ w + ex.distances
    top = np.sort(np.append(b, 0.0))[::-1]
    return top[0] - top[1] > gap


def scan_argmin(fn, lo=1e-6, hi=1 - 1e-6, tol=1e-7):
    """Coarse-to-fine grid scan for the minimizer of a unimodal 1-D function."""
    while hi - lo > tol:
        grid = np.linspace(lo, hi, 101)
        k = int(np.argmin([fn(q) for q in grid]))
        step = grid[1] - grid[0]
        lo, hi = max(grid[0], grid[k] - step), min(grid[-1], grid[k] + step)
    return 0.5 * (lo + hi)
