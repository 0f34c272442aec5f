"""Input validation helpers shared across the library.

Small check_* utilities in the spirit of scikit-learn's validation layer:
they coerce to float arrays, enforce shapes, and fail with readable errors.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector3(x, name: str = "vector") -> np.ndarray:
    v = as_float_array(x, name)
    if v.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {v.shape}")
    return v


def check_points(x, name: str = "points") -> np.ndarray:
    """Coerce to an (N, 3) float array of finite coordinates."""
    pts = as_float_array(x, name)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {pts.shape}")
    return pts


def check_quaternion(q, name: str = "quaternion", tol: float = 1e-6) -> np.ndarray:
    """Validate a scalar-first unit quaternion, renormalizing within tol."""
    arr = as_float_array(q, name)
    if arr.shape != (4,):
        raise ValueError(f"{name} must have shape (4,), got {arr.shape}")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} is not unit norm (|q| = {norm:.9f})")
    return arr / norm


def check_rotation_matrix(r, name: str = "rotation", tol: float = 1e-9) -> np.ndarray:
    m = as_float_array(r, name)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {m.shape}")
    err = np.linalg.norm(m.T @ m - np.eye(3))
    if err > tol:
        raise ValueError(f"{name} is not orthonormal (||R^T R - I|| = {err:.3e})")
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > tol:
        raise ValueError(f"{name} is not proper (det = {det:.9f})")
    return m


def check_covariance3(sigma, name: str = "covariance", tol: float = 1e-9) -> np.ndarray:
    s = as_float_array(sigma, name)
    if s.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {s.shape}")
    if np.linalg.norm(s - s.T) > tol:
        raise ValueError(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(s)
    if eigs[0] < -tol:
        raise ValueError(f"{name} is not positive semi-definite (min eig = {eigs[0]:.3e})")
    return s


def check_bounds(lower, upper, name: str = "bounds") -> tuple[np.ndarray, np.ndarray]:
    # infinities are allowed (one-sided boxes), NaNs are not
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise ValueError(f"{name} contains NaN")
    if lo.shape != hi.shape:
        raise ValueError(f"{name}: lower/upper shapes differ ({lo.shape} vs {hi.shape})")
    if np.any(lo > hi):
        raise ValueError(f"{name}: lower exceeds upper componentwise")
    return lo, hi
