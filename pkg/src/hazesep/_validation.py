"""Input checks shared by the estimators and pure functions."""

from __future__ import annotations

import numbers

import numpy as np

from .tensor import RFGrid


def as_array(x, name: str = "x", allow_nd: bool = True) -> np.ndarray:
    """Float64 view of an array-like or RFGrid; rejects NaN/Inf."""
    if isinstance(x, RFGrid):
        x = x.samples
    arr = np.asarray(x, dtype=np.float64)
    if not allow_nd and arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_frames(X, name: str = "X") -> np.ndarray:
    """Coerce a single frame or a stack of frames to shape (n, rows, cols)."""
    if isinstance(X, RFGrid):
        X = X.samples
    if isinstance(X, (list, tuple)):
        X = np.stack([as_array(x, name) for x in X])
    arr = as_array(X, name)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or 0 in arr.shape:
        raise ValueError(f"{name} must be a frame or a non-empty stack of frames, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_time(t: float, low: float = 0.0, high: float = 1.0, name: str = "t") -> float:
    if not isinstance(t, numbers.Real) or not low <= t <= high:
        raise ValueError(f"{name}={t!r} outside [{low}, {high}]")
    return float(t)


def check_positive(value, name: str, strict: bool = True) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value}")
    return value
