"""Market weights, diversity verdicts, portfolio values and relative performance."""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import trapezoid

from . import parallel
from .core import MarketPath, PathEnsemble, TimeGrid
from .errors import DomainError, PreconditionError, StepSizeError
from .logger import get_logger
from .stats import MeanEstimate, ProportionEstimate, mean_estimate, proportion

logger = get_logger(__name__)

WEIGHT_SUM_TOL = 1e-12
PORTFOLIO_SUM_TOL = 1e-10
EVIDENCE_NOTE = (
    "empirical evidence, not proof: almost-sure relative arbitrage cannot be "
    "established from finitely many simulated paths"
)


@dataclass(frozen=True)
class WeightPath:
    """Market weights mu(t_k), one row per grid point."""

    grid: TimeGrid
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != self.grid.steps + 1:
            raise DomainError(f"weights must have shape (N+1, n), got {weights.shape}")
        if np.any(weights <= 0) or np.any(weights > 1):
            raise DomainError("weights must lie in (0, 1]")
        if np.max(np.abs(weights.sum(axis=1) - 1.0)) > WEIGHT_SUM_TOL:
            raise DomainError("weight rows must sum to 1")
        weights = weights.copy()
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def max_weight(self) -> np.ndarray:
        """mu_(1)(t_k)."""
        return self.weights.max(axis=1)


def market_weights(path: MarketPath) -> WeightPath:
    return WeightPath(path.grid, path.values / path.values.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class DiversityVerdict:
    diverse: bool
    weak_diverse: bool
    max_weight_sup: float
    weight_avg: float
    delta_tested: float
    violation_count: int
    violation_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_delta(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    return float(delta)


def diversity_verdict(weights: WeightPath, delta: float) -> DiversityVerdict:
    """Diversity (sup of mu_(1)) and weak diversity (time average of mu_(1)) against 1 - delta."""
    delta = _check_delta(delta)
    top = weights.max_weight
    grid = weights.grid
    average = float(trapezoid(top, grid.times) / grid.horizon)
    violations = int(np.count_nonzero(top >= 1.0 - delta))
    return DiversityVerdict(
        diverse=bool(top.max() < 1.0 - delta),
        weak_diverse=bool(average < 1.0 - delta),
        max_weight_sup=float(top.max()),
        weight_avg=average,
        delta_tested=delta,
        violation_count=violations,
        violation_rate=violations / top.size,
    )


@dataclass(frozen=True)
class DiversitySummary:
    """Ensemble-level diversity: per-path verdict frequencies and the pooled violation rate."""

    n_paths: int
    delta_tested: float
    diverse: ProportionEstimate
    weak_diverse: ProportionEstimate
    violation_rate: float
    violation_count: int
    max_weight_sup: float
    weight_avg_mean: float

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "delta_tested": self.delta_tested,
            "diverse_fraction": self.diverse.to_dict(),
            "weak_diverse_fraction": self.weak_diverse.to_dict(),
            "violation_rate": self.violation_rate,
            "violation_count": self.violation_count,
            "max_weight_sup": self.max_weight_sup,
            "weight_avg_mean": self.weight_avg_mean,
        }


def diversity_summary(ensemble: PathEnsemble, delta: float) -> DiversitySummary:
    delta = _check_delta(delta)
    top = ensemble.max_weights()
    grid = ensemble.grid
    averages = trapezoid(top, grid.times, axis=1) / grid.horizon
    sups = top.max(axis=1)
    m = len(ensemble)
    violations = int(np.count_nonzero(top >= 1.0 - delta))
    summary = DiversitySummary(
        n_paths=m,
        delta_tested=delta,
        diverse=proportion(int(np.count_nonzero(sups < 1.0 - delta)), m),
        weak_diverse=proportion(int(np.count_nonzero(averages < 1.0 - delta)), m),
        violation_rate=violations / top.size,
        violation_count=violations,
        max_weight_sup=float(sups.max()),
        weight_avg_mean=float(averages.mean()),
    )
    logger.info(
        "Diversity summary",
        extra={"extra_fields": {"paths": m, "delta": delta, "violation_rate": summary.violation_rate}},
    )
    return summary


# evaluator(k, histories) -> proportions; histories has shape (m, k+1, n), result (m, n)
Evaluator = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PortfolioSpec:
    """Proportions pi(t_k) chosen from the observed price history up to t_k."""

    evaluator: Evaluator
    name: str = "custom"

    def proportions(self, k: int, histories: np.ndarray) -> np.ndarray:
        pi = np.asarray(self.evaluator(k, histories), dtype=float)
        pi = np.broadcast_to(pi, (histories.shape[0], histories.shape[2]))
        if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > PORTFOLIO_SUM_TOL:
            raise PreconditionError(
                f"portfolio '{self.name}' must be long-only with proportions summing to 1",
                {"step": k},
            )
        return pi

    @classmethod
    def market(cls) -> "PortfolioSpec":
        def evaluator(k, histories):
            current = histories[:, k]
            return current / current.sum(axis=1, keepdims=True)

        return cls(evaluator, "market")

    @classmethod
    def equal_weight(cls, n: int) -> "PortfolioSpec":
        return cls.fixed(np.full(n, 1.0 / n), "equal-weight")

    @classmethod
    def fixed(cls, proportions, name: str = "fixed") -> "PortfolioSpec":
        proportions = np.array(proportions, dtype=float)
        return cls(lambda k, histories: proportions, name)


def _value_batch(values: np.ndarray, pi: PortfolioSpec, z0: float) -> np.ndarray:
    m, K, _ = values.shape
    out = np.empty((m, K))
    out[:, 0] = z0
    returns = values[:, 1:] / values[:, :-1] - 1.0
    for k in range(K - 1):
        factor = 1.0 + np.einsum("mn,mn->m", pi.proportions(k, values[:, : k + 1]), returns[:, k])
        if np.any(factor <= 0):
            raise StepSizeError(
                f"value factor became nonpositive at step {k + 1}; refine the grid",
                {"step": k + 1, "portfolio": pi.name},
            )
        out[:, k + 1] = out[:, k] * factor
    return out


def _check_wealth(z0: float) -> float:
    if not np.isfinite(z0) or z0 <= 0:
        raise PreconditionError(f"initial wealth must be positive, got {z0}")
    return float(z0)


def portfolio_value(path: MarketPath, pi: PortfolioSpec, z0: float) -> np.ndarray:
    """Per-step compounded value V(t_k) of the portfolio ``pi`` started with wealth ``z0``."""
    return _value_batch(path.values[None], pi, _check_wealth(z0))[0]


def portfolio_values(ensemble: PathEnsemble, pi: PortfolioSpec, z0: float) -> np.ndarray:
    z0 = _check_wealth(z0)

    def run(indices: range) -> np.ndarray:
        return _value_batch(ensemble.values[indices.start : indices.stop], pi, z0)

    return parallel.concat(parallel.map_chunks(run, len(ensemble)))


@dataclass(frozen=True)
class RelativePerformanceReport:
    pi_name: str
    rho_name: str
    n_paths: int
    p_geq: ProportionEstimate
    p_gt: ProportionEstimate
    mean_log_ratio: MeanEstimate
    interpretation: str = EVIDENCE_NOTE

    def to_dict(self) -> dict:
        return {
            "pi": self.pi_name,
            "rho": self.rho_name,
            "n_paths": self.n_paths,
            "p_geq": self.p_geq.to_dict(),
            "p_gt": self.p_gt.to_dict(),
            "mean_log_ratio": self.mean_log_ratio.to_dict(),
            "interpretation": self.interpretation,
        }


def relative_performance(
    paths: Union[PathEnsemble, MarketPath],
    pi: PortfolioSpec,
    rho: PortfolioSpec,
    z0: float = 1.0,
    terminal_index: Optional[int] = None,
) -> RelativePerformanceReport:
    """Compare terminal values of ``pi`` and ``rho`` across an ensemble."""
    if isinstance(paths, MarketPath):
        paths = PathEnsemble(paths.grid, paths.values[None])
    k = paths.grid.steps if terminal_index is None else terminal_index
    v_pi = portfolio_values(paths, pi, z0)[:, k]
    v_rho = portfolio_values(paths, rho, z0)[:, k]
    m = len(paths)
    return RelativePerformanceReport(
        pi_name=pi.name,
        rho_name=rho.name,
        n_paths=m,
        p_geq=proportion(int(np.count_nonzero(v_pi >= v_rho)), m),
        p_gt=proportion(int(np.count_nonzero(v_pi > v_rho)), m),
        mean_log_ratio=mean_estimate(np.log(v_pi / v_rho)),
    )
