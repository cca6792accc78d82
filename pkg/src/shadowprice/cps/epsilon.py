"""The epsilon-process: base rule, boundary clamp and running-minimum envelope."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import DiversityRegion, MarketPath, TimeGrid
from ..errors import ConstructionError, DomainError


@dataclass(frozen=True)
class EpsilonProcess:
    """Tolerance process on a set of knots.

    ``base`` is eta/(1+eta) * min_i S_i, ``clamped`` is its pointwise minimum
    with half the distance to the complement of O, and ``values`` is the
    running minimum of ``clamped`` (started from ``carry`` when the knots
    continue an earlier branch). Between knots the process is the
    right-continuous step function through ``values``.
    """

    times: np.ndarray
    values: np.ndarray
    base: np.ndarray
    clamped: np.ndarray
    eta: float
    grid: Optional[TimeGrid] = None

    @property
    def clamp_active(self) -> np.ndarray:
        return self.clamped < self.base

    @property
    def envelope_active(self) -> np.ndarray:
        return self.values < self.clamped

    @property
    def lipschitz_constant(self) -> float:
        """Constant L with |eps_t - eps_s| <= L * max |S(u) - S(s)|."""
        return max(self.eta, 0.5) if self.clamp_active.any() else self.eta

    def at(self, t: float) -> float:
        """Value of the step function at time t."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(k, 0)])

    def check_invariants(self, prices: np.ndarray, region: DiversityRegion) -> None:
        """Positivity, monotonicity and eps < dist(S, complement of O) at every knot."""
        if np.any(self.values <= 0):
            raise ConstructionError("epsilon must be positive")
        if np.any(np.diff(self.values) > 0):
            raise ConstructionError("epsilon must be nonincreasing")
        distance = region.distance_rows(prices)
        if np.any(self.values >= distance):
            raise ConstructionError("epsilon must stay below the distance to the complement of O")


def epsilon_on_knots(
    times,
    prices,
    eta: float,
    region: DiversityRegion,
    carry: float = np.inf,
    grid: Optional[TimeGrid] = None,
) -> EpsilonProcess:
    """Build the epsilon-process on arbitrary increasing knots.

    ``carry`` is the envelope value reached before the first knot.
    """
    if not np.isfinite(eta) or eta <= 0:
        raise DomainError(f"eta must be positive, got {eta}")
    times = np.array(times, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    if prices.shape[0] != times.size:
        raise DomainError("times and prices disagree in length")
    inside = region.contains_rows(prices)
    if not inside.all():
        first = int(np.argmin(inside))
        raise DomainError(
            f"path leaves O(delta) at knot {first}",
            {"knot": first, "time": float(times[first])},
        )
    base = eta / (1.0 + eta) * prices.min(axis=1)
    clamped = np.minimum(base, 0.5 * region.distance_rows(prices))
    values = np.minimum.accumulate(np.minimum(clamped, carry))
    for array in (times, values, base, clamped):
        array.setflags(write=False)
    return EpsilonProcess(times, values, base, clamped, float(eta), grid)


def build_epsilon(path: MarketPath, eta: float, region: DiversityRegion) -> EpsilonProcess:
    """Epsilon-process of a grid path; the path must stay in O(delta)."""
    if region.n != path.n_assets:
        raise DomainError("region dimension differs from the number of assets")
    eps = epsilon_on_knots(path.grid.times, path.values, eta, region, grid=path.grid)
    eps.check_invariants(path.values, region)
    return eps


def lipschitz_excess(prices, eps_values, L: float) -> float:
    """max over knots s <= t of |eps_t - eps_s| - L * max_{s<=u<=t} |S(u) - S(s)|.

    Nonpositive exactly when the epsilon condition holds with constant L.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    eps_values = np.asarray(eps_values, dtype=float)
    worst = -np.inf
    for s in range(eps_values.size):
        moves = np.maximum.accumulate(np.linalg.norm(prices[s:] - prices[s], axis=1))
        excess = np.abs(eps_values[s:] - eps_values[s]) - L * moves
        worst = max(worst, float(excess.max()))
    return worst
