"""Radial process, time change and squared-Bessel comparison for driftless martingales.

For a martingale X with covariance c I <= a <= C I, the squared radius
R = |X|^2 run on the clock of N = int X.dX/|X| solves
dR~ = 2 sqrt(R~) dbeta + b ds with b <= d C / c, so it is dominated by a
squared Bessel process of that dimension driven by the same beta. This module
extracts (N, <N>, b) from a grid path, simulates BESQ, couples the two, and
estimates small-ball probabilities.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import parallel
from .core import RngStream, TimeGrid
from .errors import ModelContractError, PreconditionError, TimeChangeError
from .logger import get_logger
from .sde_engine import VolatilitySpec, _knots_after
from .stats import MeanEstimate, ProportionEstimate, mean_estimate, proportion

logger = get_logger(__name__)

BOUND_TOL = 1e-12


class MartingaleModel:
    """X = X_0 + sigma W with constant sigma (d x d_w)."""

    def __init__(self, sigma):
        self.vol = VolatilitySpec.constant(sigma)
        self.sigma = self.vol.matrix
        self.covariance = self.sigma @ self.sigma.T

    @property
    def d(self) -> int:
        return self.vol.n

    @property
    def bounds(self) -> Tuple[float, float]:
        """(c, C): extreme eigenvalues of the covariance."""
        return self.vol.eps_lo, self.vol.M_hi

    def _path(self, x0: np.ndarray, steps: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        noise = gen.standard_normal((steps.size, self.vol.d)) * np.sqrt(steps)[:, None]
        return np.vstack([x0, x0 + np.cumsum(noise @ self.sigma.T, axis=0)])

    def _start(self, x0) -> np.ndarray:
        x0 = np.zeros(self.d) if x0 is None else np.asarray(x0, dtype=float)
        if x0.shape != (self.d,):
            raise PreconditionError(f"x0 must have length {self.d}")
        return x0

    def simulate(self, grid: TimeGrid, rng: RngStream, x0=None) -> np.ndarray:
        return self._path(self._start(x0), np.full(grid.steps, grid.dt), rng.generator())

    def simulate_ensemble(self, grid: TimeGrid, rng: RngStream, n_paths: int, x0=None) -> np.ndarray:
        """Paths with shape (m, N+1, d); path p uses ``rng.substream(p)``."""
        x0 = self._start(x0)
        steps = np.full(grid.steps, grid.dt)

        def run(indices: range) -> np.ndarray:
            return np.stack([self._path(x0, steps, rng.substream(p).generator()) for p in indices])

        return parallel.concat(parallel.map_chunks(run, n_paths))

    def continue_from(self, start_time: float, state, grid: TimeGrid, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
        knots, steps = _knots_after(grid, start_time)
        return knots, self._path(self._start(state), steps, rng.generator())


@dataclass(frozen=True)
class RadialDecomposition:
    grid: TimeGrid
    R: np.ndarray
    N: np.ndarray
    qvar_N: np.ndarray
    dN: np.ndarray
    dqvar: np.ndarray
    b: np.ndarray
    c: float
    C: float
    d: int

    def eta(self, s) -> np.ndarray:
        """Inverse clock: the time t at which <N>_t = s."""
        return np.interp(s, self.qvar_N, self.grid.times)

    def time_changed(self, s) -> np.ndarray:
        """R~(s) = R(eta(s)), piecewise linear between grid points."""
        return np.interp(self.eta(s), self.grid.times, self.R)


def radial_decompose(X, grid: TimeGrid, covariance, c: float, C: float) -> RadialDecomposition:
    """Discrete N_t = sum u_k . dX_k with u = X/|X| (e_1 at the origin) and its clock.

    ``covariance`` is a = sigma sigma^T, constant (d x d) or per step (N, d, d).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != grid.steps + 1:
        raise PreconditionError("X must have one row per grid point")
    if not 0 < c <= C:
        raise PreconditionError("volatility bounds must satisfy 0 < c <= C")
    d = X.shape[1]
    a = np.asarray(covariance, dtype=float)
    eigenvalues = np.linalg.eigvalsh(a)
    a = np.broadcast_to(a, (grid.steps, d, d))
    if eigenvalues.min() < c - BOUND_TOL * C or eigenvalues.max() > C + BOUND_TOL * C:
        raise ModelContractError(
            "covariance eigenvalues leave [c, C]",
            {"c": c, "C": C, "observed_min": float(eigenvalues.min()), "observed_max": float(eigenvalues.max())},
        )

    radius = np.linalg.norm(X[:-1], axis=1)
    u = np.zeros((grid.steps, d))
    u[:, 0] = 1.0
    moving = radius > 0
    u[moving] = X[:-1][moving] / radius[moving, None]

    dX = np.diff(X, axis=0)
    dN = np.einsum("kd,kd->k", u, dX)
    dt = np.diff(grid.times)
    dqvar = np.einsum("kd,kde,ke->k", u, a, u) * dt
    if np.any(dqvar < c * dt * (1 - 1e-9)) or np.any(dqvar > C * dt * (1 + 1e-9)):
        raise ModelContractError("clock increments leave [c dt, C dt]")
    trace_increments = np.trace(a, axis1=1, axis2=2) * dt
    return RadialDecomposition(
        grid=grid,
        R=np.sum(X**2, axis=1),
        N=np.r_[0.0, np.cumsum(dN)],
        qvar_N=np.r_[0.0, np.cumsum(dqvar)],
        dN=dN,
        dqvar=dqvar,
        b=trace_increments / dqvar,
        c=float(c),
        C=float(C),
        d=d,
    )


@dataclass(frozen=True)
class BesqParams:
    dimension: float
    horizon: float

    def __post_init__(self):
        if self.dimension < 0:
            raise PreconditionError("BESQ dimension must be nonnegative")
        if self.horizon <= 0:
            raise PreconditionError("horizon must be positive")

    @staticmethod
    def required_dimension(d: int, c: float, C: float) -> float:
        return d * C / c

    @classmethod
    def for_bounds(cls, d: int, c: float, C: float, horizon: float) -> "BesqParams":
        return cls(cls.required_dimension(d, c, C), horizon)

    def satisfies_comparison(self, d: int, c: float, C: float) -> bool:
        return self.dimension >= self.required_dimension(d, c, C) * (1 - 1e-12)


def _full_truncation(z0: np.ndarray, dimension: float, ds: np.ndarray, dbeta: np.ndarray) -> np.ndarray:
    """Z_{k+1} = max(Z_k + delta ds + 2 sqrt(Z_k^+) dbeta, 0) for a batch (m, K)."""
    m, K = dbeta.shape
    Z = np.empty((m, K + 1))
    Z[:, 0] = z0
    for k in range(K):
        Z[:, k + 1] = np.maximum(Z[:, k] + dimension * ds[k] + 2.0 * np.sqrt(np.maximum(Z[:, k], 0.0)) * dbeta[:, k], 0.0)
    return Z


def besq_simulate(params: BesqParams, grid: TimeGrid, rng: RngStream) -> np.ndarray:
    """BESQ(delta) from Z_0 = 0 by full-truncation Euler on ``grid``."""
    dt = np.diff(grid.times)
    dbeta = rng.generator().standard_normal(grid.steps) * np.sqrt(dt)
    return _full_truncation(np.zeros(1), params.dimension, dt, dbeta[None])[0]


def besq_ensemble(params: BesqParams, grid: TimeGrid, rng: RngStream, n_paths: int) -> np.ndarray:
    """Shape (m, N+1); path p equals ``besq_simulate(..., rng.substream(p))``."""
    dt = np.diff(grid.times)

    def run(indices: range) -> np.ndarray:
        dbeta = np.stack([rng.substream(p).generator().standard_normal(grid.steps) for p in indices]) * np.sqrt(dt)
        return _full_truncation(np.zeros(len(indices)), params.dimension, dt, dbeta)

    return parallel.concat(parallel.map_chunks(run, n_paths))


@dataclass(frozen=True)
class ComparisonReport:
    max_excess: float
    max_abs_diff: float
    fraction_dominated: float
    tolerance: float
    n_points: int
    dimension: float
    required_dimension: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def coupled_besq(decomp: RadialDecomposition, dimension: float) -> np.ndarray:
    """BESQ driven by beta = N on the clock <N>, sampled at the grid's clock values.

    Full-truncation Euler on the clock increments:
    Z_{k+1} = max(Z_k + delta d<N>_k + 2 sqrt(Z_k^+) dN_k, 0), started at R_0.
    Nothing of X enters except dN and d<N>, so R~ - Z carries the scheme's
    O(sqrt dt) error.
    """
    return _full_truncation(np.array([decomp.R[0]]), dimension, decomp.dqvar, decomp.dN[None])[0]


def coupled_comparison(
    decomp: RadialDecomposition,
    params: BesqParams,
    strict: bool = True,
    tol: Optional[float] = None,
) -> ComparisonReport:
    """Compare R~ with the coupled BESQ at every clock value of the grid.

    With ``strict`` the dimension must be at least dC/c; smaller dimensions
    are an experiment, not a theorem.
    """
    required = BesqParams.required_dimension(decomp.d, decomp.c, decomp.C)
    if strict and not params.satisfies_comparison(decomp.d, decomp.c, decomp.C):
        raise PreconditionError(
            f"delta_B = {params.dimension} is below dC/c = {required}",
            {"dimension": params.dimension, "required": required},
        )
    if np.any(decomp.dqvar <= 0):
        raise TimeChangeError("quadratic variation clock is not strictly increasing")
    tol = 1e-6 + 10.0 * np.sqrt(decomp.grid.dt) if tol is None else tol
    gap = decomp.R - coupled_besq(decomp, params.dimension)
    return ComparisonReport(
        max_excess=float(gap.max()),
        max_abs_diff=float(np.abs(gap).max()),
        fraction_dominated=float(np.mean(gap <= tol)),
        tolerance=tol,
        n_points=gap.size,
        dimension=params.dimension,
        required_dimension=required,
    )


def coupled_comparison_ensemble(
    model: MartingaleModel,
    grid: TimeGrid,
    params: BesqParams,
    rng: RngStream,
    n_paths: int,
    strict: bool = True,
    tol: Optional[float] = None,
) -> ComparisonReport:
    """Pool :func:`coupled_comparison` over ``n_paths`` paths of ``model``."""
    c, C = model.bounds

    def run(indices: range) -> List[ComparisonReport]:
        reports = []
        for p in indices:
            X = model.simulate(grid, rng.substream(p))
            reports.append(coupled_comparison(radial_decompose(X, grid, model.covariance, c, C), params, strict, tol))
        return reports

    reports = [r for chunk in parallel.map_chunks(run, n_paths) for r in chunk]
    points = sum(r.n_points for r in reports)
    pooled = ComparisonReport(
        max_excess=max(r.max_excess for r in reports),
        max_abs_diff=max(r.max_abs_diff for r in reports),
        fraction_dominated=sum(r.fraction_dominated * r.n_points for r in reports) / points,
        tolerance=reports[0].tolerance,
        n_points=points,
        dimension=params.dimension,
        required_dimension=reports[0].required_dimension,
    )
    logger.info("Coupled BESQ comparison", extra={"extra_fields": pooled.to_dict()})
    return pooled


@dataclass(frozen=True)
class SupportReport:
    """P(sup_t |X_t| <= eps) with its BESQ lower bound."""

    eps: float
    n_paths: int
    grid_estimate: ProportionEstimate
    bridge_estimate: Optional[MeanEstimate]
    besq_lower_bound: ProportionEstimate
    besq_dimension: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "n_paths": self.n_paths,
            "grid_estimate": self.grid_estimate.to_dict(),
            "bridge_estimate": None if self.bridge_estimate is None else self.bridge_estimate.to_dict(),
            "besq_lower_bound": self.besq_lower_bound.to_dict(),
            "besq_dimension": self.besq_dimension,
        }


def _bridge_survival(X: np.ndarray, variance: float, dt: float, eps: float) -> np.ndarray:
    """Probability that the Brownian bridges between grid points of 1-d paths (m, K+1) stay in [-eps, eps]."""
    if np.isinf(eps):
        return np.ones(X.shape[0])
    x, y = X[:, :-1], X[:, 1:]
    inside = (np.abs(x) <= eps) & (np.abs(y) <= eps)
    scale = 2.0 / (variance * dt)
    with np.errstate(over="ignore", invalid="ignore"):
        upper = np.exp(-scale * np.clip((eps - x) * (eps - y), 0.0, None))
        lower = np.exp(-scale * np.clip((eps + x) * (eps + y), 0.0, None))
        log_survival = np.log1p(-np.minimum(upper, 1.0)) + np.log1p(-np.minimum(lower, 1.0))
    log_survival = np.where(inside, log_survival, -np.inf)
    return np.exp(log_survival.sum(axis=1))


def support_probability_curve(
    model: MartingaleModel,
    grid: TimeGrid,
    eps_levels: Sequence[float],
    n_paths: int,
    rng: RngStream,
    besq_dimension: Optional[float] = None,
) -> List[SupportReport]:
    """Small-ball probabilities for several eps levels from the same paths.

    Paths of X use ``rng.substream(0)``; the BESQ bound uses
    ``rng.substream(1)`` on the clock horizon C*T. In one dimension a
    Brownian-bridge correction for crossings between grid points is added.
    """
    eps_levels = [float(e) for e in eps_levels]
    if n_paths < 1 or any(e <= 0 for e in eps_levels):
        raise PreconditionError("n_paths must be >= 1 and eps > 0")
    c, C = model.bounds
    dimension = BesqParams.required_dimension(model.d, c, C) if besq_dimension is None else besq_dimension
    paths = rng.substream(0)
    one_dim = model.d == 1

    def run(indices: range) -> np.ndarray:
        X = np.stack([model.simulate(grid, paths.substream(p)) for p in indices])
        sup = np.linalg.norm(X, axis=2).max(axis=1)
        columns = [sup]
        if one_dim:
            columns.extend(_bridge_survival(X[:, :, 0], float(model.covariance[0, 0]), grid.dt, e) for e in eps_levels)
        return np.column_stack(columns)

    table = parallel.concat(parallel.map_chunks(run, n_paths))
    clock = TimeGrid(C * grid.horizon, grid.steps)
    besq_sup = besq_ensemble(BesqParams(dimension, clock.horizon), clock, rng.substream(1), n_paths).max(axis=1)

    reports = []
    for i, eps in enumerate(eps_levels):
        reports.append(
            SupportReport(
                eps=eps,
                n_paths=n_paths,
                grid_estimate=proportion(int(np.count_nonzero(table[:, 0] <= eps)), n_paths),
                bridge_estimate=mean_estimate(table[:, 1 + i]) if one_dim else None,
                besq_lower_bound=proportion(int(np.count_nonzero(besq_sup < eps**2)), n_paths),
                besq_dimension=dimension,
            )
        )
    return reports


def support_probability(
    model: MartingaleModel,
    grid: TimeGrid,
    eps: float,
    n_paths: int,
    rng: RngStream,
    besq_dimension: Optional[float] = None,
) -> SupportReport:
    (report,) = support_probability_curve(model, grid, [eps], n_paths, rng, besq_dimension)
    return report


@dataclass(frozen=True)
class CfsReport:
    t_index: int
    eta_tube: float
    estimate: ProportionEstimate

    def to_dict(self) -> dict:
        return {"t_index": self.t_index, "eta_tube": self.eta_tube, "estimate": self.estimate.to_dict()}


def ramp_target(start, end, grid: TimeGrid, t_index: int) -> np.ndarray:
    """Straight line from ``start`` at t_{t_index} to ``end`` at T, one row per grid point."""
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    times = grid.times[t_index:]
    share = (times - times[0]) / max(grid.horizon - times[0], 1e-300)
    return start + share[:, None] * (end - start)


def frozen_target(state, grid: TimeGrid, t_index: int) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    return np.tile(state, (grid.steps - t_index + 1, 1))


def cfs_probe(
    model,
    grid: TimeGrid,
    prefix,
    t_index: int,
    target,
    eta_tube: float,
    n_paths: int,
    rng: RngStream,
) -> CfsReport:
    """Estimate P(sup_{[t, T]} |S - f| < eta_tube | prefix) by resimulating continuations.

    ``prefix`` holds the path up to (at least) grid index ``t_index`` and
    ``target`` the values of f at the grid points from t_index to N.
    """
    if not 0 <= t_index < grid.steps:
        raise PreconditionError(f"t_index must lie in [0, {grid.steps - 1}]")
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 1:
        prefix = prefix[:, None]
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    if prefix.shape[0] <= t_index or target.shape != (grid.steps - t_index + 1, prefix.shape[1]):
        raise PreconditionError("prefix or target does not match the grid")
    if not np.all(np.isfinite(target)):
        raise PreconditionError("target must be finite")
    state = prefix[t_index]
    if not np.linalg.norm(target[0] - state) < eta_tube:
        raise PreconditionError(
            "target does not start within eta_tube of the prefix end",
            {"gap": float(np.linalg.norm(target[0] - state)), "eta_tube": eta_tube},
        )
    start = grid.time(t_index)

    def run(indices: range) -> np.ndarray:
        hits = []
        for i in indices:
            _, values = model.continue_from(start, state, grid, rng.substream(i))
            values = np.asarray(values, dtype=float).reshape(target.shape)
            hits.append(np.linalg.norm(values - target, axis=1).max() < eta_tube)
        return np.asarray(hits)

    hits = parallel.concat(parallel.map_chunks(run, n_paths))
    return CfsReport(t_index, float(eta_tube), proportion(int(hits.sum()), n_paths))


def cfs_family(
    model,
    grid: TimeGrid,
    prefix,
    t_index: int,
    endpoints,
    eta_tube: float,
    n_paths: int,
    rng: RngStream,
) -> List[CfsReport]:
    """:func:`cfs_probe` along ramps to each endpoint; ramp j uses ``rng.substream(j)``."""
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 1:
        prefix = prefix[:, None]
    return [
        cfs_probe(model, grid, prefix, t_index, ramp_target(prefix[t_index], end, grid, t_index), eta_tube, n_paths, rng.substream(j))
        for j, end in enumerate(np.atleast_2d(endpoints))
    ]
