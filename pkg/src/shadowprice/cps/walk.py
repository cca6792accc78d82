"""Random walk with retirement and its tube property.

The grid path is read as its piecewise-linear interpolant and epsilon as the
right-continuous step function through its knot values. A pivot moves to the
current price at the first time the path leaves the ball of radius eps(t)/2
around the previous pivot. When no exit happens before the horizon, or the exit
falls exactly on it, the walk retires and the pivot stays where it was.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..core import MarketPath
from ..errors import ConstructionError, DomainError
from ..logger import get_logger
from .epsilon import EpsilonProcess

logger = get_logger(__name__)

CROSSINGS = ("interpolated", "grid")
TUBE_TOL = 1e-12
_NUDGE_START = 1e-15


@dataclass(frozen=True)
class Exit:
    """First exit from the pivot ball.

    ``index`` is the first knot at or after the exit time; ``fraction`` is the
    position inside the segment ending at that knot (1.0 on the knot itself).
    """

    index: int
    on_knot: bool
    fraction: float
    time: float
    point: np.ndarray


def _larger_root(w: np.ndarray, D: np.ndarray, h: float) -> float:
    """Larger solution of |w + lam * D| = h."""
    a = float(D @ D)
    b = 2.0 * float(w @ D)
    c = float(w @ w) - h * h
    root = np.sqrt(max(b * b - 4.0 * a * c, 0.0))
    if b > 0 and c < 0:
        return 2.0 * c / (-b - root)
    return (-b + root) / (2.0 * a)


def first_exit(
    times: np.ndarray,
    prices: np.ndarray,
    eps_values: np.ndarray,
    center: np.ndarray,
    start_segment: int,
    start_fraction: float = 0.0,
    crossing: str = "interpolated",
) -> Optional[Exit]:
    """Scan from position (start_segment, start_fraction) for the next exit.

    Returns ``None`` when the path stays in the ball up to the last knot.
    """
    last = times.size - 1
    for j in range(start_segment + 1, last + 1):
        seg = j - 1
        if crossing == "interpolated":
            h = 0.5 * eps_values[seg]
            if np.linalg.norm(prices[j] - center) > h:
                lo = start_fraction if seg == start_segment else 0.0
                w = prices[seg] - center
                D = prices[j] - prices[seg]
                lam = min(max(_larger_root(w, D, h), lo), 1.0)
                point = prices[seg] + lam * D
                step = _NUDGE_START
                while np.linalg.norm(point - center) > h and lam > lo:
                    lam = max(lo, lam - step)
                    point = prices[seg] + lam * D
                    step *= 2.0
                time = times[seg] + lam * (times[j] - times[seg])
                return Exit(j, False, float(lam), float(time), point)
        if np.linalg.norm(prices[j] - center) > 0.5 * eps_values[j]:
            return Exit(j, True, 1.0, float(times[j]), prices[j].copy())
    return None


@dataclass(frozen=True)
class RetirementWalk:
    """Pivot times tau_n, their knot positions, and pivots X_n.

    ``pivot_indices[n]`` is the first knot with time >= tau_n and
    ``on_knot[n]`` tells whether tau_n coincides with it.
    """

    pivot_times: np.ndarray
    pivot_indices: np.ndarray
    on_knot: np.ndarray
    pivots: np.ndarray
    retired: bool
    retirement_step: Optional[int]
    crossing: str = "interpolated"

    @property
    def n_steps(self) -> int:
        return self.pivots.shape[0] - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.pivots, axis=0)

    @property
    def floor_indices(self) -> np.ndarray:
        """Last knot with time <= tau_n."""
        return np.where(self.on_knot, self.pivot_indices, self.pivot_indices - 1)

    def pivot(self, step: int) -> np.ndarray:
        """X_step, frozen at the retirement pivot beyond the last step."""
        return self.pivots[min(step, self.n_steps)]


def walk_on_knots(
    times,
    prices,
    eps_values,
    crossing: str = "interpolated",
    max_moves: Optional[int] = None,
) -> RetirementWalk:
    """Run the walk on arbitrary knots; stops unretired after ``max_moves`` moves."""
    if crossing not in CROSSINGS:
        raise DomainError(f"crossing must be one of {CROSSINGS}")
    times = np.asarray(times, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    eps_values = np.asarray(eps_values, dtype=float)
    last = times.size - 1
    guard = 4 * (last + 1) * 64

    pivots = [prices[0].copy()]
    pivot_times = [float(times[0])]
    indices = [0]
    on_knot = [True]
    segment, fraction = 0, 0.0
    retired = False

    while True:
        if max_moves is not None and len(pivots) - 1 >= max_moves:
            break
        if len(pivots) > guard:
            raise ConstructionError("retirement walk failed to advance", {"moves": len(pivots) - 1})
        center = pivots[-1]
        found = first_exit(times, prices, eps_values, center, segment, fraction, crossing)
        at_horizon = found is not None and found.on_knot and found.index == last
        if found is None or at_horizon:
            pivots.append(center.copy())
            pivot_times.append(float(times[last]))
            indices.append(last)
            on_knot.append(True)
            retired = True
            break
        pivots.append(found.point)
        pivot_times.append(found.time)
        indices.append(found.index)
        on_knot.append(found.on_knot)
        if found.on_knot:
            segment, fraction = found.index, 0.0
        else:
            segment, fraction = found.index - 1, found.fraction

    return RetirementWalk(
        pivot_times=np.asarray(pivot_times),
        pivot_indices=np.asarray(indices, dtype=int),
        on_knot=np.asarray(on_knot, dtype=bool),
        pivots=np.vstack(pivots),
        retired=retired,
        retirement_step=len(pivots) - 1 if retired else None,
        crossing=crossing,
    )


def retirement_walk(path: MarketPath, eps: EpsilonProcess, crossing: str = "interpolated") -> RetirementWalk:
    """Walk with retirement along a grid path; always ends retired."""
    if eps.values.size != path.grid.steps + 1:
        raise DomainError("epsilon-process and path have different grids")
    walk = walk_on_knots(path.grid.times, path.values, eps.values, crossing)
    logger.debug(
        "Retirement walk",
        extra={"extra_fields": {"steps": walk.n_steps, "crossing": crossing}},
    )
    return walk


@dataclass(frozen=True)
class TubeReport:
    passed: bool
    max_slack: float
    worst_index: int
    tolerance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def tube_slack(prices, eps_values, walk: RetirementWalk) -> np.ndarray:
    """Largest |S(t_k) - X_{n+1}| - eps(t_k) over the n with tau_n <= t_k <= tau_{n+1}."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    eps_values = np.asarray(eps_values, dtype=float)
    slack = np.full(eps_values.size, -np.inf)
    floors = walk.floor_indices
    for n in range(walk.n_steps):
        lo, hi = walk.pivot_indices[n], floors[n + 1]
        if hi < lo:
            continue
        gaps = np.linalg.norm(prices[lo : hi + 1] - walk.pivots[n + 1], axis=1) - eps_values[lo : hi + 1]
        slack[lo : hi + 1] = np.maximum(slack[lo : hi + 1], gaps)
    return slack


def tube_report(prices, eps_values, walk: RetirementWalk, raise_on_failure: bool = True) -> TubeReport:
    slack = tube_slack(prices, eps_values, walk)
    tolerance = TUBE_TOL * max(1.0, float(np.max(np.abs(prices))))
    worst = int(np.argmax(slack))
    report = TubeReport(bool(slack[worst] <= tolerance), float(slack[worst]), worst, tolerance)
    if not report.passed and raise_on_failure:
        raise ConstructionError(
            f"tube inequality violated at knot {worst}",
            {"max_slack": report.max_slack, "knot": worst, "crossing": walk.crossing},
        )
    return report


def tube_check(
    path: MarketPath,
    eps: EpsilonProcess,
    walk: RetirementWalk,
    raise_on_failure: bool = True,
) -> TubeReport:
    """Check |S_t - X_{n+1}| <= eps_t whenever tau_n <= t <= tau_{n+1}, at every grid point."""
    return tube_report(path.values, eps.values, walk, raise_on_failure)


@dataclass(frozen=True)
class PivotCaseReport:
    """Replay of the pivot-move bound |X_{n+1} - X_n| <= eps(tau_{n+1}-)/2 by case."""

    counts: Dict[str, int]
    max_excess: float
    passed: bool

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "max_excess": self.max_excess, "passed": self.passed}


def pivot_bound_check(prices, eps_values, walk: RetirementWalk, raise_on_failure: bool = True) -> PivotCaseReport:
    """Sort every move into retirement, ball crossing inside a segment, or a drop of eps at a knot."""
    prices = np.asarray(prices, dtype=float)
    eps_values = np.asarray(eps_values, dtype=float)
    counts = {"retirement": 0, "crossing": 0, "knot": 0}
    worst = -np.inf
    for n in range(walk.n_steps):
        move = float(np.linalg.norm(walk.pivots[n + 1] - walk.pivots[n]))
        if walk.retired and n + 1 == walk.retirement_step and move == 0.0:
            counts["retirement"] += 1
        elif walk.on_knot[n + 1]:
            counts["knot"] += 1
        else:
            counts["crossing"] += 1
        left = max(int(walk.pivot_indices[n + 1]) - 1, 0)
        worst = max(worst, move - 0.5 * eps_values[left])
    tolerance = TUBE_TOL * max(1.0, float(np.max(np.abs(prices))))
    report = PivotCaseReport(counts, float(worst), bool(worst <= tolerance))
    if not report.passed and raise_on_failure:
        raise ConstructionError("pivot move exceeds half the left-limit epsilon", report.to_dict())
    return report
