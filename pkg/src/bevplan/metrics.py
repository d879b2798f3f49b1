"""Evaluation metrics: per-class IoU, final-position l2, success and on-route rates."""

import numpy as np

from .exceptions import DomainError
from .trajectory import HORIZON


def metric_iou(pred, gt, threshold=0.5):
    """Per-class IoU of binarized grids (last axis = class); empty unions score 1."""
    p = np.asarray(getattr(pred, "values", pred))
    g = np.asarray(getattr(gt, "values", gt))
    if p.shape != g.shape:
        raise DomainError(f"shape mismatch: {p.shape} vs {g.shape}")
    a, b = p >= threshold, g >= threshold
    axes = tuple(range(p.ndim - 1))
    inter = np.sum(a & b, axis=axes)
    union = np.sum(a | b, axis=axes)
    return np.where(union > 0, inter / np.maximum(union, 1), 1.0)


def metric_l2_at_horizon(plan, human):
    """Distance between final positions (t0 + 5 s)."""
    if len(plan.states) != HORIZON or len(human.states) != HORIZON:
        raise DomainError("both trajectories must have the full horizon")
    return float(np.hypot(*(plan.xy[-1] - human.xy[-1])))


def metric_sr_rl(results):
    """Success rate and on-route rate, both in percent."""
    results = list(results)
    if not results:
        raise DomainError("no episode results")
    sr = 100.0 * sum(r.outcome == "success" for r in results) / len(results)
    drive = sum(r.driving_time for r in results)
    route = sum(r.route_time for r in results)
    rl = 100.0 * route / drive if drive > 0 else 100.0
    return sr, rl
