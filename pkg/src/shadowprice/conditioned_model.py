"""Diverse market obtained by conditioning a local-martingale model on staying in O(delta).

The pre-model has log-scale drift -1/2 a_ii, so every price is a driftless
stochastic exponential. Conditioning on {S(t_k) in O for every grid point} is
done by rejection: attempt ``a`` of a draw always uses substream ``a`` and the
lowest accepted attempt wins, which keeps results independent of batching.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import parallel
from .core import DiversityRegion, MarketPath, PathEnsemble, RngStream, TimeGrid
from .errors import AcceptanceTooRareError, PreconditionError
from .logger import get_logger
from .sde_engine import DiffusionModel, DriftSpec, VolatilitySpec, _euler_log
from .stats import proportion, z_score

logger = get_logger(__name__)

GRID_ONLY_NOTE = (
    "region membership is checked at grid points only; excursions between grid "
    "points are not detected (refine the grid to reduce this bias)"
)
FIRST_WINDOW = 2


def pre_model_drift(vol: VolatilitySpec) -> DriftSpec:
    """Log drift -1/2 diag(sigma sigma^T) making prices local martingales."""
    return DriftSpec(evaluator=lambda t, states: -0.5 * vol.covariance_diagonal(t, states))


class ConditionedSampler:
    """Rejection sampler for the pre-model conditioned on staying in a region."""

    def __init__(self, vol: VolatilitySpec, region: DiversityRegion, max_attempts: int = 10_000):
        if max_attempts < 1:
            raise PreconditionError("max_attempts must be >= 1")
        if region.n != vol.n:
            raise PreconditionError("region and volatility dimensions differ")
        self.vol = vol
        self.region = region
        self.max_attempts = int(max_attempts)
        self.pre_model = DiffusionModel(pre_model_drift(vol), vol, name="pre-model")

    @property
    def n(self) -> int:
        return self.vol.n

    def scaled(self, factor: float) -> "ConditionedSampler":
        """Sampler whose constant volatility is multiplied by ``factor``."""
        if self.vol.matrix is None:
            raise PreconditionError("only constant volatility can be rescaled")
        return ConditionedSampler(VolatilitySpec.constant(factor * self.vol.matrix), self.region, self.max_attempts)

    def _attempt_logs(self, grid: TimeGrid, s0: np.ndarray, streams: Sequence[RngStream]) -> np.ndarray:
        steps = np.full(grid.steps, grid.dt)
        log0 = np.log(s0)

        def run(indices: range) -> np.ndarray:
            generators = [streams[i].generator() for i in indices]
            noise = self.pre_model._noise(generators, steps)
            start = np.broadcast_to(log0, (len(indices), log0.size))
            return _euler_log(start, grid.times[:-1], steps, noise, self.pre_model.drift, self.vol)

        return parallel.concat(parallel.map_chunks(run, len(streams)))

    def stays_in_region(self, prices: np.ndarray) -> np.ndarray:
        """For prices with shape (m, K, n): whether each path is in O at every point."""
        return self.region.contains_rows(prices).all(axis=-1)

    def _check_start(self, s0) -> np.ndarray:
        s0 = self.pre_model._check_start(s0)
        if not self.region.contains(s0):
            raise PreconditionError("s0 must lie in O(delta)", {"s0": s0.tolist()})
        return s0

    def simulate(self, grid: TimeGrid, s0, rng: RngStream) -> MarketPath:
        return sample_conditioned(self, grid, s0, rng)

    def simulate_ensemble(self, grid: TimeGrid, s0, rng: RngStream, n_paths: int) -> PathEnsemble:
        return sample_conditioned_ensemble(self, grid, s0, rng, n_paths)

    def continue_from(self, start_time: float, state, grid: TimeGrid, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
        """Continuation from ``state`` conditioned on staying in the region until the horizon."""
        state = self._check_start(state)
        for attempt in range(self.max_attempts):
            knots, prices = self.pre_model.continue_from(start_time, state, grid, rng.substream(attempt))
            if self.region.contains_rows(prices).all():
                return knots, prices
        raise AcceptanceTooRareError(self.max_attempts, 0, proportion(0, self.max_attempts).upper)


def _first_accepted(
    sampler: ConditionedSampler,
    grid: TimeGrid,
    s0: np.ndarray,
    roots: Sequence[RngStream],
) -> List[Optional[np.ndarray]]:
    """Lowest accepted attempt for every root stream, in growing attempt windows."""
    results: List[Optional[np.ndarray]] = [None] * len(roots)
    pending = list(range(len(roots)))
    offset, window = 0, FIRST_WINDOW
    while pending and offset < sampler.max_attempts:
        width = min(window, sampler.max_attempts - offset)
        streams = [roots[p].substream(offset + a) for p in pending for a in range(width)]
        prices = np.exp(sampler._attempt_logs(grid, s0, streams))
        accepted = sampler.stays_in_region(prices).reshape(len(pending), width)
        prices = prices.reshape(len(pending), width, grid.steps + 1, -1)
        still_pending = []
        for row, p in enumerate(pending):
            hits = np.nonzero(accepted[row])[0]
            if hits.size:
                results[p] = prices[row, hits[0]]
            else:
                still_pending.append(p)
        pending = still_pending
        offset += width
        window *= 2
    if pending:
        raise AcceptanceTooRareError(sampler.max_attempts, 0, proportion(0, sampler.max_attempts).upper)
    return results


def sample_conditioned(sampler: ConditionedSampler, grid: TimeGrid, s0, rng: RngStream) -> MarketPath:
    """An exact draw from the grid-level conditional law P0(. | S(t_k) in O for all k)."""
    s0 = sampler._check_start(s0)
    (prices,) = _first_accepted(sampler, grid, s0, [rng])
    return MarketPath(grid, prices)


def sample_conditioned_ensemble(
    sampler: ConditionedSampler,
    grid: TimeGrid,
    s0,
    rng: RngStream,
    n_paths: int,
) -> PathEnsemble:
    """``n_paths`` conditioned draws; path p equals ``sample_conditioned(..., rng.substream(p))``."""
    if n_paths < 1:
        raise PreconditionError("n_paths must be >= 1")
    s0 = sampler._check_start(s0)
    paths = _first_accepted(sampler, grid, s0, [rng.substream(p) for p in range(n_paths)])
    return PathEnsemble(grid, np.stack(paths))


@dataclass(frozen=True)
class AcceptanceReport:
    """Fraction of unconditioned paths that stay in the region."""

    rate: float
    lower: float
    upper: float
    n_trials: int
    n_accepted: int
    note: str = GRID_ONLY_NOTE

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "ci_lower": self.lower,
            "ci_upper": self.upper,
            "n_trials": self.n_trials,
            "n_accepted": self.n_accepted,
            "note": self.note,
        }


def acceptance_rate(
    sampler: ConditionedSampler,
    grid: TimeGrid,
    s0,
    n_trials: int,
    rng: RngStream,
) -> AcceptanceReport:
    """Acceptance frequency of the rejection sampler with a 95% Wilson interval."""
    if n_trials < 1:
        raise PreconditionError("n_trials must be >= 1")
    s0 = sampler.pre_model._check_start(s0)
    streams = [rng.substream(i) for i in range(n_trials)]
    prices = np.exp(sampler._attempt_logs(grid, s0, streams))
    accepted = int(sampler.stays_in_region(prices).sum())
    estimate = proportion(accepted, n_trials)
    logger.info(
        "Acceptance rate estimated",
        extra={"extra_fields": {"rate": estimate.estimate, "trials": n_trials, "horizon": grid.horizon}},
    )
    return AcceptanceReport(estimate.estimate, estimate.lower, estimate.upper, n_trials, accepted)


def acceptance_curve(
    cases: Sequence[Tuple[ConditionedSampler, TimeGrid]],
    s0,
    n_trials: int,
    rng: RngStream,
) -> List[AcceptanceReport]:
    """Acceptance rates for several (sampler, grid) cases sharing one random stream."""
    return [acceptance_rate(sampler, grid, s0, n_trials, rng) for sampler, grid in cases]


@dataclass(frozen=True)
class Tube:
    """Paths staying strictly within ``radius`` of ``reference`` at every grid point."""

    reference: MarketPath
    radius: float

    def contains(self, prices: np.ndarray) -> np.ndarray:
        if np.isinf(self.radius):
            return np.ones(prices.shape[0], dtype=bool)
        gaps = np.linalg.norm(prices - self.reference.values[None], axis=-1)
        return gaps.max(axis=-1) < self.radius


@dataclass(frozen=True)
class BayesRatioReport:
    """Two estimators of P(tube | prefix, stay in O) and their agreement."""

    t_index: int
    status: str
    ratio_estimate: float
    ratio_standard_error: float
    pre_model_matched: int
    pre_model_in_region: int
    conditioned_estimate: float
    conditioned_standard_error: float
    conditioned_matched: int
    z_score: float
    note: str = GRID_ONLY_NOTE

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _match_prefix(prices: np.ndarray, reference: np.ndarray, t_index: int, radius: float) -> np.ndarray:
    """Indices of paths whose log prefix is within ``radius`` (sup norm) of the reference prefix."""
    features = np.log(prices[:, : t_index + 1]).reshape(prices.shape[0], -1)
    target = np.log(reference[: t_index + 1]).ravel()
    tree = cKDTree(features)
    return np.asarray(sorted(tree.query_ball_point(target, r=radius, p=np.inf)), dtype=int)


def _ratio(successes: int, trials: int) -> Tuple[float, float]:
    if trials == 0:
        return float("nan"), float("nan")
    p = successes / trials
    return p, float(np.sqrt(p * (1.0 - p) / trials))


def bayes_ratio_check(
    sampler: ConditionedSampler,
    grid: TimeGrid,
    s0,
    t_index: int,
    tube: Tube,
    n_paths: int,
    rng: RngStream,
    match_radius: float = 0.05,
    min_matched: int = 30,
) -> BayesRatioReport:
    """Compare P0(tube and O | prefix) / P0(O | prefix) with the conditioned sampler.

    Prefixes are matched to the tube reference's prefix on [0, t_index] by a
    sup-norm radius search on log prices. Too few matches give an
    ``inconclusive`` report.
    """
    if not 0 <= t_index <= grid.steps:
        raise PreconditionError(f"t_index must lie in [0, {grid.steps}]")
    s0 = sampler._check_start(s0)
    reference = tube.reference.values

    streams = [rng.substream(0).substream(i) for i in range(n_paths)]
    free = np.exp(sampler._attempt_logs(grid, s0, streams))
    matched = _match_prefix(free, reference, t_index, match_radius)
    in_region = sampler.stays_in_region(free[matched]) if matched.size else np.zeros(0, dtype=bool)
    in_tube = tube.contains(free[matched]) if matched.size else np.zeros(0, dtype=bool)
    ratio, ratio_se = _ratio(int((in_region & in_tube).sum()), int(in_region.sum()))

    conditioned = sample_conditioned_ensemble(sampler, grid, s0, rng.substream(1), n_paths).values
    c_matched = _match_prefix(conditioned, reference, t_index, match_radius)
    c_in_tube = tube.contains(conditioned[c_matched]) if c_matched.size else np.zeros(0, dtype=bool)
    c_est, c_se = _ratio(int(c_in_tube.sum()), int(c_matched.size))

    if in_region.sum() < min_matched or c_matched.size < min_matched:
        status, z = "inconclusive", float("nan")
    else:
        z = z_score(ratio, ratio_se, c_est, c_se)
        status = "consistent" if z < 3.0 else "inconsistent"

    report = BayesRatioReport(
        t_index=t_index,
        status=status,
        ratio_estimate=ratio,
        ratio_standard_error=ratio_se,
        pre_model_matched=int(matched.size),
        pre_model_in_region=int(in_region.sum()),
        conditioned_estimate=c_est,
        conditioned_standard_error=c_se,
        conditioned_matched=int(c_matched.size),
        z_score=z,
    )
    if status == "inconclusive":
        logger.warning("Bayes ratio check inconclusive", extra={"extra_fields": report.to_dict()})
    return report
