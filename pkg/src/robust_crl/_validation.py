"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numbers

import numpy as np

STOCHASTIC_ATOL = 1e-12


class ValidationError(ValueError):
    """Raised when an MDP, policy or kernel violates its invariants."""


def check_probability_rows(arr, name, atol=STOCHASTIC_ATOL):
    """Check that the last axis of ``arr`` holds probability distributions.

    Returns the array as float64. The error message names the first bad row
    by its index tuple so corrupted inputs can be located.
    """
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValidationError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    neg = np.argwhere(arr < 0)
    if neg.size:
        idx = tuple(int(i) for i in neg[0][:-1])
        raise ValidationError(f"{name} row {idx} has a negative entry")
    sums = np.atleast_1d(arr.sum(axis=-1))
    off = np.argwhere(np.abs(sums - 1.0) > atol)
    if off.size:
        idx = tuple(int(i) for i in off[0])
        where = f"row {idx}" if arr.ndim > 1 else "vector"
        raise ValidationError(
            f"{name} {where} sums to {float(sums[idx])!r}, not 1"
        )
    return arr


def check_unit_interval(arr, name):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValidationError(f"{name} must lie in [0, 1]")
    return arr


def check_discount(gamma):
    if not isinstance(gamma, numbers.Real) or not 0.0 <= float(gamma) < 1.0:
        raise ValidationError(f"gamma must be in [0, 1), got {gamma!r}")
    return float(gamma)


def check_delta(delta):
    if not isinstance(delta, numbers.Real) or not 0.0 <= float(delta) <= 1.0:
        raise ValidationError(f"delta must be in [0, 1], got {delta!r}")
    return float(delta)


def check_sigma(sigma):
    if not isinstance(sigma, numbers.Real) or not float(sigma) < 0.0:
        raise ValidationError(f"sigma must be strictly negative, got {sigma!r}")
    return float(sigma)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not float(value) > 0.0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_shape(arr, shape, name):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != tuple(shape):
        raise ValidationError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr
