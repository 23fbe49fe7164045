"""Input validation helpers shared by the estimator-style classes and ops."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch, EmptyInput


def as_points(x, name="points") -> np.ndarray:
    """Coerce to a float64 (n, 3) array; raise EmptyInput when n == 0."""
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite values")
    return pts


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_unit(v, name="vector", tol=1e-6) -> np.ndarray:
    v = as_vector(v, name)
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} must be unit-norm, got |v| = {norm:.8f}")
    return v


def check_same_dim(a, b, name_a="a", name_b="b"):
    if a.shape[-1] != b.shape[-1]:
        raise DimMismatch(
            f"{name_a} has dim {a.shape[-1]}, {name_b} has dim {b.shape[-1]}"
        )


def check_probability(x, name="value") -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


def check_positive(x, name="value") -> float:
    x = float(x)
    if not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x
