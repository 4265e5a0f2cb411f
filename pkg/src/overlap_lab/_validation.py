"""Small argument checks shared across modules."""

import math

import numpy as np


def check_eta(eta, name="eta"):
    eta = float(eta)
    if not (0.0 < eta <= 0.5) or math.isnan(eta):
        raise ValueError(f"{name} must lie in (0, 0.5], got {eta!r}")
    return eta


def check_probability(value, name, *, open_left=False, open_right=False):
    value = float(value)
    lo_ok = value > 0.0 if open_left else value >= 0.0
    hi_ok = value < 1.0 if open_right else value <= 1.0
    if not (lo_ok and hi_ok):
        left = "(" if open_left else "["
        right = ")" if open_right else "]"
        raise ValueError(f"{name} must lie in {left}0, 1{right}, got {value!r}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not value >= 0.0:
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    return value


def check_probability_vector(v, name, atol=1e-12):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector")
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(v.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (sum={v.sum():.17g})")
    return v


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
