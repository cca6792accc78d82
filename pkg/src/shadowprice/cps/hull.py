"""Convex-hull membership tests for node increments."""

from typing import Tuple

import numpy as np
from scipy.optimize import linprog, nnls

HULL_TOL = 1e-12


def convex_combination(points, x) -> Tuple[np.ndarray, float, bool]:
    """Nonnegative weights summing to one that best reproduce ``x`` from ``points``.

    Returns the weights, the residual norm and whether ``x`` lies in the hull.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.asarray(x, dtype=float).ravel()
    scale = max(1.0, float(np.max(np.abs(points))))
    A = np.r_[points.T / scale, np.ones((1, points.shape[0]))]
    b = np.r_[x / scale, np.ones(1)]
    w, norm = nnls(A, b)
    return w, float(norm), bool(norm <= 1e-9)


def in_hull(points, x) -> bool:
    return convex_combination(points, x)[2]


def interior_margin(points) -> float:
    """Largest t such that 0 = sum lam_k p_k with sum lam = 1 and every lam_k >= t.

    Positive exactly when zero is a strictly positive convex combination of
    the points, i.e. lies in the relative interior of their hull.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    K, n = points.shape
    scale = float(np.max(np.abs(points)))
    if scale == 0.0:
        return 1.0 / K
    A_eq = np.zeros((n + 1, K + 1))
    A_eq[:n, :K] = points.T / scale
    A_eq[n, :K] = 1.0
    b_eq = np.r_[np.zeros(n), 1.0]
    A_ub = np.hstack([-np.eye(K), np.ones((K, 1))])
    cost = np.r_[np.zeros(K), -1.0]
    result = linprog(
        cost,
        A_ub=A_ub,
        b_ub=np.zeros(K),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=[(0.0, None)] * K + [(None, 1.0)],
        method="highs",
    )
    if result.status != 0:
        return -np.inf
    return float(-result.fun)


def zero_in_interior(points) -> bool:
    """Whether 0 lies in the interior of conv(points) in R^n."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.linalg.matrix_rank(points) < points.shape[1]:
        return False
    return interior_margin(points) > HULL_TOL
