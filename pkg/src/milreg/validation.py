"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_fraction",
    "check_feature_matrix",
    "check_vector",
    "check_probability_vector",
    "check_binary_vector",
    "check_mask",
    "check_same_shape",
    "round_half_up",
]


def check_fraction(value: float, name: str = "value") -> float:
    """Validate a scalar fraction in [0, 1] and return it as a float."""
    v = float(value)
    if not np.isfinite(v) or v < 0.0 or v > 1.0:
        raise ValueError(f"{name} must be a finite value in [0, 1], got {value!r}")
    return v


def check_feature_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array with all entries finite."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_vector(x, name: str = "x", min_length: int = 1) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.shape[0] < min_length:
        raise ValueError(f"{name} needs at least {min_length} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_probability_vector(p, name: str = "probs", min_length: int = 1) -> np.ndarray:
    arr = check_vector(p, name, min_length)
    if np.any((arr < 0.0) | (arr > 1.0)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_binary_vector(y, name: str = "labels", min_length: int = 1) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] < min_length:
        raise ValueError(f"{name} must be a 1-D vector of length >= {min_length}")
    values = np.unique(arr)
    if not np.all(np.isin(values, (0, 1, False, True))):
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int64)


def check_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D mask, got shape {arr.shape}")
    return arr.astype(bool)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must have matching shapes, got {a.shape} and {b.shape}")


def round_half_up(x: float) -> int:
    """Round to the nearest integer with halves going up.

    A 1e-9 guard absorbs binary representation error of rational fractions
    (0.15 * 10 is stored as 1.4999999999999998 but must round to 2).
    """
    return int(np.floor(x + 0.5 + 1e-9))
