"""Dense float64 vector/matrix helpers used by the filter and trainers.

Everything here operates on plain numpy arrays.  Problem dimensions are
tiny (phase spaces of dimension 2 or 6), so dense algorithms are the
right tool; the value added over raw numpy is strict shape validation
and SPD-failure semantics shared by every caller.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

__all__ = [
    "cholesky_lower",
    "symmetrize",
    "mat_vec",
    "mat_mat",
    "outer",
    "solve_spd",
]

_SYM_TOL = 1e-10


def _require_square(a: np.ndarray, where: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{where}: expected a square matrix, got shape {a.shape}")
    return a


def cholesky_lower(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite for asymmetric (beyond 1e-10) or
    non-positive-definite input; DimensionMismatch for non-square input.
    """
    a = _require_square(a, "cholesky_lower")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if float(np.max(np.abs(a - a.T))) > _SYM_TOL * scale:
        raise NotPositiveDefinite("cholesky_lower: matrix is not symmetric within 1e-10")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"cholesky_lower: {exc}") from exc


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A.T) / 2."""
    a = _require_square(a, "symmetrize")
    return (a + a.T) / 2.0


def mat_vec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"mat_vec: {a.shape} @ {x.shape}")
    return a @ x


def mat_mat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"mat_mat: {a.shape} @ {b.shape}")
    return a @ b


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionMismatch(f"outer: expected vectors, got {u.shape}, {v.shape}")
    return np.outer(u, v)


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for SPD a via Cholesky; b may be a vector or matrix."""
    a = _require_square(a, "solve_spd")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"solve_spd: A {a.shape} vs b {b.shape}")
    lower = cholesky_lower(a)
    y = solve_triangular(lower, b, lower=True)
    return solve_triangular(lower.T, y, lower=False)
