"""Minimal-entropy martingale re-weighting of a scenario-tree node.

At a node with child increments D_k and original weights p_k the tilted
weights minimize sum q_k log(q_k / p_k) subject to sum q_k D_k = 0, plus a
floor on the mass of retirement children and a budget on sum q_k |D_k|^2.
The solution has the Gibbs form q ~ p exp(lam.D + alpha 1{ret} - beta |D|^2);
the multipliers come from damped Newton on the convex dual.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from ..errors import NoTiltExistsError, NumericalTiltError, PreconditionError
from ..logger import get_logger
from .hull import zero_in_interior

logger = get_logger(__name__)

SOLVER_TOL = 1e-12
MAX_NEWTON_ITER = 200
LINE_SEARCH_BELOW = 1e-6
RELAXATION_SHARE = 0.01
DEFAULT_RETIREMENT_FLOOR = 0.5
DEFAULT_BUDGET_N = 1


@dataclass(frozen=True)
class NodeTilt:
    """Tilted weights of one node together with their diagnostics."""

    q: np.ndarray
    p: np.ndarray
    martingale_residual: float
    second_moment: float
    budget: float
    budget_relaxed: bool = False
    lp_min_second_moment: Optional[float] = None
    retirement_mass: Optional[float] = None
    active: Tuple[str, ...] = field(default=())


def _dual_solve(features: np.ndarray, logp: np.ndarray, target: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Minimize log sum p exp(F theta) - theta.c; returns (q, theta)."""
    theta = np.zeros(target.size)

    def objective(th):
        return logsumexp(logp + features @ th) - th @ target

    for _ in range(MAX_NEWTON_ITER):
        z = logp + features @ theta
        q = np.exp(z - logsumexp(z))
        mean = features.T @ q
        grad = mean - target
        if np.max(np.abs(grad)) <= tol:
            return q / q.sum(), theta
        hessian = (features * q[:, None]).T @ features - np.outer(mean, mean)
        step = -np.linalg.lstsq(hessian, grad, rcond=None)[0]
        if np.max(np.abs(grad)) < LINE_SEARCH_BELOW:
            theta = theta + step
            continue
        base, slope, t = objective(theta), float(grad @ step), 1.0
        while t > 1e-12 and objective(theta + t * step) > base + 1e-4 * t * slope:
            t *= 0.5
        theta = theta + t * step
    raise NumericalTiltError("entropy dual did not converge", {"gradient": float(np.max(np.abs(grad)))})


def _lp_min_second_moment(X: np.ndarray, sq: np.ndarray, retired: np.ndarray, floor: Optional[float]) -> float:
    K, n = X.shape
    A_eq = np.vstack([X.T, np.ones((1, K))])
    b_eq = np.r_[np.zeros(n), 1.0]
    A_ub = b_ub = None
    if floor is not None:
        A_ub = -retired.astype(float)[None, :]
        b_ub = np.array([-floor])
    result = linprog(sq, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=[(0.0, None)] * K, method="highs")
    if result.status != 0:
        raise NumericalTiltError("second-moment LP failed", {"status": int(result.status)})
    return float(result.fun)


def _solve_with(
    active: Sequence[str],
    X: np.ndarray,
    sq: np.ndarray,
    retired: np.ndarray,
    logp: np.ndarray,
    floor: Optional[float],
    budget: float,
    tol: float,
) -> Optional[np.ndarray]:
    """Solve with the given inequality constraints held as equalities; None unless KKT holds."""
    columns, targets = [X], [np.zeros(X.shape[1])]
    if "retirement" in active:
        columns.append(retired.astype(float)[:, None])
        targets.append(np.array([floor]))
    if "budget" in active:
        columns.append(-sq[:, None])
        targets.append(np.array([-budget]))
    try:
        q, theta = _dual_solve(np.hstack(columns), logp, np.concatenate(targets), tol)
    except NumericalTiltError:
        return None
    multipliers = theta[X.shape[1]:]
    if np.any(multipliers < -1e-9):
        return None
    if floor is not None and "retirement" not in active and q[retired].sum() < floor - tol:
        return None
    if "budget" not in active and np.isfinite(budget) and q @ sq > budget + tol:
        return None
    return q


def tilt_node(
    increments,
    p=None,
    retired=None,
    retirement_mass_floor: float = DEFAULT_RETIREMENT_FLOOR,
    budget_n: int = DEFAULT_BUDGET_N,
    tol: float = SOLVER_TOL,
) -> NodeTilt:
    """Entropy tilt of one node.

    The second-moment budget is 2**-budget_n times the node's largest |D_k|^2.
    When no strictly positive weights meet it, the budget is relaxed to
    lp_min + 1% of the gap to the unconstrained second moment and the
    relaxation is reported.
    """
    D = np.asarray(increments, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    K = D.shape[0]
    p = np.full(K, 1.0 / K) if p is None else np.asarray(p, dtype=float)
    if p.shape != (K,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise PreconditionError("original weights must be positive and sum to 1")
    retired = np.zeros(K, dtype=bool) if retired is None else np.asarray(retired, dtype=bool)
    if not 0.0 < retirement_mass_floor < 1.0:
        raise PreconditionError("retirement_mass_floor must lie in (0, 1)")

    norms = np.linalg.norm(D, axis=1)
    scale = float(norms.max())
    if scale == 0.0:
        return NodeTilt(p.copy(), p.copy(), 0.0, 0.0, 0.0, retirement_mass=float(p[retired].sum()) if retired.any() else None)
    if not zero_in_interior(D):
        raise NoTiltExistsError(
            "zero is not in the interior of the convex hull of the increments",
            {"children": K, "dimension": D.shape[1]},
        )

    X = D / scale
    sq = (norms / scale) ** 2
    logp = np.log(p)
    floor = retirement_mass_floor if retired.any() else None
    budget = 2.0 ** (-budget_n)

    combos = [("retirement",)] if floor is not None else []
    q, active = None, ()
    for candidate in [()] + combos:
        q = _solve_with(candidate, X, sq, retired, logp, floor, np.inf, tol)
        if q is not None:
            active = candidate
            break
    if q is None:
        raise NumericalTiltError("no active set satisfies the optimality conditions")

    unconstrained = float(q @ sq)
    relaxed, lp_min = False, None
    if unconstrained > budget * (1.0 + 1e-9):
        lp_min = _lp_min_second_moment(X, sq, retired, floor)
        if budget <= lp_min + tol:
            relaxed = True
            budget = lp_min + RELAXATION_SHARE * (unconstrained - lp_min)
        if unconstrained - budget > tol:
            constrained = None
            for candidate in [("budget",)] + [c + ("budget",) for c in combos]:
                constrained = _solve_with(candidate, X, sq, retired, logp, floor, budget, tol)
                if constrained is not None:
                    q, active = constrained, candidate
                    break
            if constrained is None:
                raise NumericalTiltError("no active set satisfies the budget")

    residual = float(np.linalg.norm(q @ D))
    tilt = NodeTilt(
        q=q,
        p=p.copy(),
        martingale_residual=residual,
        second_moment=float(q @ norms**2),
        budget=budget * scale**2,
        budget_relaxed=relaxed,
        lp_min_second_moment=None if lp_min is None else lp_min * scale**2,
        retirement_mass=float(q[retired].sum()) if retired.any() else None,
        active=tuple(active),
    )
    if relaxed:
        logger.debug(
            "Second-moment budget relaxed",
            extra={"extra_fields": {"budget": tilt.budget, "lp_min": tilt.lp_min_second_moment}},
        )
    return tilt
