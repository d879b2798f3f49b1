"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DomainError

PROB_ATOL = 1e-6


def as_float_array(x, ndim=None, name="array", dtype=np.float64):
    """Convert ``x`` to a finite float ndarray, optionally checking ``ndim``."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise DomainError(
            f"shape mismatch: {names[0]} {np.shape(a)} vs {names[1]} {np.shape(b)}"
        )


def check_distribution(p, axis=-1, atol=PROB_ATOL, name="distribution"):
    """Raise unless ``p`` is non-negative and sums to one along ``axis``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError(f"{name} has negative entries")
    sums = p.sum(axis=axis)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise DomainError(f"{name} not normalized (max |sum-1| = {worst:.3g})")
    return p


def check_nonnegative(values, name="values"):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    return arr


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped
