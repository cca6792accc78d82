"""Monte Carlo probe of the support of the first walk increment at a pivot."""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional

import numpy as np

from .. import parallel
from ..core import DiversityRegion, RngStream, TimeGrid
from ..errors import PreconditionError
from ..logger import get_logger
from ..stats import ProportionEstimate, proportion
from .epsilon import epsilon_on_knots
from .hull import in_hull, zero_in_interior
from .walk import first_exit

logger = get_logger(__name__)

N_DIRECTIONS = 64


@dataclass(frozen=True)
class SupportProbeReport:
    n_samples: int
    status: str
    retirement: ProportionEstimate
    delta_star: float
    theta_cov: float
    coverage: Dict[str, float]
    min_coverage: float
    zero_in_hull: bool
    zero_in_interior: bool
    small_ball_radius: float
    small_ball: ProportionEstimate
    small_ball_all_retired: bool
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "status": self.status,
            "retirement": self.retirement.to_dict(),
            "delta_star": self.delta_star,
            "theta_cov": self.theta_cov,
            "coverage": dict(self.coverage),
            "min_coverage": self.min_coverage,
            "zero_in_hull": self.zero_in_hull,
            "zero_in_interior": self.zero_in_interior,
            "small_ball_radius": self.small_ball_radius,
            "small_ball": self.small_ball.to_dict(),
            "small_ball_all_retired": self.small_ball_all_retired,
            "notes": list(self.notes),
        }


def _angular_coverage(angles: np.ndarray, theta_cov: float) -> float:
    grid = 2.0 * np.pi * np.arange(N_DIRECTIONS) / N_DIRECTIONS
    gaps = np.abs(grid[:, None] - angles[None, :]) % (2.0 * np.pi)
    gaps = np.minimum(gaps, 2.0 * np.pi - gaps)
    return float(np.mean(gaps.min(axis=1) <= theta_cov))


def _coverage(projected: np.ndarray, theta_cov: float) -> Dict[str, float]:
    n = projected.shape[1]
    if n == 1:
        signs = np.sign(projected[:, 0])
        return {"0": float(np.mean([np.any(signs > 0), np.any(signs < 0)]))}
    coverage = {}
    for i, j in combinations(range(n), 2):
        plane = projected[:, [i, j]]
        keep = np.linalg.norm(plane, axis=1) > 0
        angles = np.arctan2(plane[keep, 1], plane[keep, 0])
        coverage[f"{i},{j}"] = _angular_coverage(angles, theta_cov) if angles.size else 0.0
    return coverage


def increment_support_probe(
    model,
    pivot_state,
    eps0: float,
    L0: float,
    n_samples: int,
    rng: RngStream,
    grid: TimeGrid,
    start_time: float = 0.0,
    eta: Optional[float] = None,
    region: Optional[DiversityRegion] = None,
    theta_cov: Optional[float] = None,
) -> SupportProbeReport:
    """Draw first increments X_1 - X_0 from fresh continuations at ``pivot_state``.

    With ``eta`` and ``region`` the continuation uses the epsilon rule started
    from ``eps0``; otherwise epsilon is held at ``eps0``. Sample i uses
    ``rng.substream(i)``.
    """
    if n_samples < 1:
        raise PreconditionError("n_samples must be >= 1")
    if eps0 <= 0 or L0 < 0:
        raise PreconditionError("eps0 must be positive and L0 nonnegative")
    pivot_state = np.asarray(pivot_state, dtype=float)
    theta_cov = 2.0 * np.pi / N_DIRECTIONS if theta_cov is None else float(theta_cov)
    small_radius = eps0 / (3.0 * max(L0, 1.0))

    def run(indices: range) -> np.ndarray:
        rows = []
        for i in indices:
            knots, prices = model.continue_from(start_time, pivot_state, grid, rng.substream(i))
            prices = np.asarray(prices, dtype=float).reshape(knots.size, -1)
            if eta is not None and region is not None:
                eps = epsilon_on_knots(knots, prices, eta, region, carry=eps0).values
            else:
                eps = np.full(knots.size, float(eps0))
            found = first_exit(knots, prices, eps, prices[0], 0)
            last = knots.size - 1
            retired = found is None or (found.on_knot and found.index == last)
            increment = np.zeros(pivot_state.size) if retired else found.point - pivot_state
            excursion = float(np.max(np.linalg.norm(prices - pivot_state, axis=1)))
            rows.append(np.r_[increment, float(retired), excursion])
        return np.array(rows)

    table = parallel.concat(parallel.map_chunks(run, n_samples))
    increments = table[:, :-2]
    retired = table[:, -2].astype(bool)
    in_small_ball = table[:, -1] < small_radius

    delta_star = eps0 / (4.0 + 2.0 * L0)
    norms = np.linalg.norm(increments, axis=1)
    moving = norms > 0
    notes: List[str] = []
    if moving.any():
        projected = delta_star * increments[moving] / norms[moving, None]
        coverage = _coverage(projected, theta_cov)
        interior = zero_in_interior(increments)
        hull = in_hull(increments, np.zeros(pivot_state.size))
    else:
        coverage, interior, hull = {}, False, True
        notes.append("all increments are zero: the pivot process is already constant and tilting is trivial")
    if not retired.any():
        notes.append("no retirement observed")

    report = SupportProbeReport(
        n_samples=n_samples,
        status="ok" if moving.any() and retired.any() else "inconclusive",
        retirement=proportion(int(retired.sum()), n_samples),
        delta_star=delta_star,
        theta_cov=theta_cov,
        coverage=coverage,
        min_coverage=min(coverage.values()) if coverage else 0.0,
        zero_in_hull=bool(hull),
        zero_in_interior=bool(interior),
        small_ball_radius=small_radius,
        small_ball=proportion(int(in_small_ball.sum()), n_samples),
        small_ball_all_retired=bool(np.all(retired[in_small_ball])),
        notes=notes,
    )
    logger.info(
        "Increment support probe",
        extra={"extra_fields": {"samples": n_samples, "status": report.status, "retirement": report.retirement.estimate}},
    )
    return report
