"""Euler-Maruyama simulation of log-price SDEs.

    d log S_i(t) = gamma_i(t) dt + sum_v sigma_iv(t) dW_v(t)

Drift and volatility are pluggable evaluators ``f(t, log_states)`` working on a
batch of states with shape (m, n). The Fernholz diverse drift and the
two-asset arctan market are provided as ready-made models.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import parallel
from .core import DiversityRegion, MarketPath, PathEnsemble, RngStream, TimeGrid
from .errors import (
    DomainError,
    ModelContractError,
    PreconditionError,
    SimulationDivergedError,
    SingularityError,
)
from .logger import get_logger

logger = get_logger(__name__)

DEFAULT_GAMMA_CAP = 1e3
DEFAULT_DELTA_GUARD = 1e-6
BOUND_CHECK_DIRECTIONS = 1000
BOUND_CHECK_SEED = 7919

Evaluator = Callable[[float, np.ndarray], np.ndarray]


def _as_batch(states) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    return states[None, :] if states.ndim == 1 else states


def weights_from_logs(log_states: np.ndarray) -> np.ndarray:
    """Market weights of a batch of log-price states."""
    shifted = np.exp(log_states - log_states.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class VolatilitySpec:
    """Volatility sigma (n x d) with non-degeneracy bounds.

    eps_lo * |xi|^2 <= |sigma^T xi|^2 <= M_hi * |xi|^2 for all xi.
    """

    n: int
    d: int
    evaluator: Evaluator
    eps_lo: float
    M_hi: float
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.eps_lo < 0 or self.M_hi <= 0 or self.eps_lo > self.M_hi:
            raise DomainError(f"invalid volatility bounds [{self.eps_lo}, {self.M_hi}]")

    @classmethod
    def constant(
        cls,
        matrix,
        eps_lo: Optional[float] = None,
        M_hi: Optional[float] = None,
    ) -> "VolatilitySpec":
        sigma = np.atleast_2d(np.asarray(matrix, dtype=float))
        a = sigma @ sigma.T
        eigenvalues = np.linalg.eigvalsh(a)
        lo = float(max(eigenvalues.min(), 0.0)) if eps_lo is None else float(eps_lo)
        hi = float(eigenvalues.max()) if M_hi is None else float(M_hi)
        if hi <= 0:
            # sigma == 0: any positive upper bound holds
            hi = 1.0
        frozen = sigma.copy()
        frozen.setflags(write=False)
        spec = cls(
            n=sigma.shape[0],
            d=sigma.shape[1],
            evaluator=lambda t, states: frozen,
            eps_lo=lo,
            M_hi=hi,
            matrix=frozen,
        )
        spec.check_bounds(frozen)
        return spec

    @classmethod
    def diagonal(cls, diag) -> "VolatilitySpec":
        return cls.constant(np.diag(np.asarray(diag, dtype=float)))

    @classmethod
    def scalar(cls, sigma: float, n: int) -> "VolatilitySpec":
        return cls.constant(float(sigma) * np.eye(n))

    def matrices(self, t: float, log_states: np.ndarray) -> np.ndarray:
        """sigma at every state of the batch, shape (m, n, d) or (n, d) if constant."""
        return np.asarray(self.evaluator(t, log_states), dtype=float)

    def covariance_diagonal(self, t: float, log_states: np.ndarray) -> np.ndarray:
        """Diagonal of a = sigma sigma^T, broadcast to shape (m, n)."""
        sigma = self.matrices(t, log_states)
        diag = np.sum(sigma**2, axis=-1)
        return np.broadcast_to(diag, log_states.shape)

    def check_bounds(self, sigma: np.ndarray, n_directions: int = BOUND_CHECK_DIRECTIONS) -> None:
        """Spot-check the non-degeneracy bounds on random unit directions."""
        rng = np.random.default_rng(BOUND_CHECK_SEED)
        xi = rng.standard_normal((n_directions, self.n))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 2:
            sigma = sigma[None]
        for matrix in sigma:
            quad = np.sum((xi @ matrix) ** 2, axis=1)
            tol = 1e-12 * max(1.0, self.M_hi)
            if np.any(quad < self.eps_lo - tol) or np.any(quad > self.M_hi + tol):
                raise ModelContractError(
                    "volatility violates its non-degeneracy bounds",
                    {
                        "eps_lo": self.eps_lo,
                        "M_hi": self.M_hi,
                        "observed_min": float(quad.min()),
                        "observed_max": float(quad.max()),
                    },
                )


@dataclass(frozen=True)
class DriftSpec:
    """Log-scale drift gamma with optional componentwise clamp and region reflection."""

    evaluator: Evaluator
    clamp_bound: Optional[float] = None
    reflect_region: Optional[DiversityRegion] = None
    delta_guard: float = DEFAULT_DELTA_GUARD

    def __post_init__(self):
        if self.clamp_bound is not None and self.clamp_bound <= 0:
            raise DomainError("clamp_bound must be positive")

    def evaluate(self, t: float, log_states: np.ndarray) -> np.ndarray:
        gamma = np.broadcast_to(np.asarray(self.evaluator(t, log_states), dtype=float), log_states.shape)
        if self.clamp_bound is not None:
            gamma = np.clip(gamma, -self.clamp_bound, self.clamp_bound)
        return gamma

    @classmethod
    def zero(cls, n: int) -> "DriftSpec":
        return cls.constant(np.zeros(n))

    @classmethod
    def constant(cls, gamma) -> "DriftSpec":
        gamma = np.asarray(gamma, dtype=float).copy()
        gamma.setflags(write=False)
        return cls(evaluator=lambda t, states: gamma)

    @classmethod
    def fernholz(
        cls,
        params: "FernholzParams",
        gamma_cap: float = DEFAULT_GAMMA_CAP,
        delta_guard: float = DEFAULT_DELTA_GUARD,
    ) -> "DriftSpec":
        def evaluator(t, log_states):
            return fernholz_drift_batch(params, weights_from_logs(log_states), gamma_cap)

        return cls(
            evaluator=evaluator,
            clamp_bound=max(gamma_cap, float(np.max(params.g))),
            reflect_region=params.region,
            delta_guard=delta_guard,
        )


@dataclass(frozen=True)
class FernholzParams:
    """Parameters of the Fernholz diverse drift."""

    g: np.ndarray
    delta: float
    M: float

    def __post_init__(self):
        g = np.array(self.g, dtype=float).ravel()
        if g.size < 2:
            raise DomainError("the Fernholz model needs at least two assets")
        if np.any(g <= 0):
            raise DomainError("all g_i must be positive")
        if self.M <= 0:
            raise DomainError("M must be positive")
        region = DiversityRegion(self.delta, g.size)
        if region.is_empty:
            raise DomainError(f"1 - delta = {1 - self.delta} must exceed 1/n = {1 / g.size}")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def region(self) -> DiversityRegion:
        return DiversityRegion(self.delta, self.n)


def _singular_term(params: FernholzParams, top_weight):
    return params.M / (params.delta * (np.log(top_weight) - np.log(1.0 - params.delta)))


def fernholz_drift(params: FernholzParams, mu) -> np.ndarray:
    """Fernholz drift gamma at market weights mu.

    The maximizer is the lowest index among tied largest weights; it receives
    M / (delta * (log mu_(1) - log(1 - delta))), every other asset gets g_i.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (params.n,):
        raise DomainError(f"mu must have length {params.n}")
    if np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise DomainError("mu must lie on the open simplex")
    leader = int(np.argmax(mu))
    top = float(mu[leader])
    if top >= 1.0 - params.delta:
        raise SingularityError(
            f"largest weight {top} reached the pole at 1 - delta = {1 - params.delta}",
            {"mu_max": top, "threshold": 1.0 - params.delta},
        )
    gamma = params.g.copy()
    gamma[leader] = _singular_term(params, top)
    return gamma


def fernholz_drift_batch(params: FernholzParams, mu: np.ndarray, gamma_cap: float) -> np.ndarray:
    """Fernholz drift for a batch of weights with the singular term clamped at ``gamma_cap``."""
    mu = _as_batch(mu)
    rows = np.arange(mu.shape[0])
    leader = np.argmax(mu, axis=1)
    top = mu[rows, leader]
    with np.errstate(divide="ignore", invalid="ignore"):
        singular = _singular_term(params, np.minimum(top, 1.0 - params.delta))
    singular = np.where(np.isfinite(singular), singular, -gamma_cap)
    singular = np.maximum(singular, -gamma_cap)
    gamma = np.broadcast_to(params.g, mu.shape).copy()
    gamma[rows, leader] = singular
    return gamma


def reflect_into_region(prices: np.ndarray, region: DiversityRegion, delta_guard: float) -> np.ndarray:
    """Rescale the largest coordinate of rows with mu_(1) >= 1 - delta - guard onto that level."""
    target = region.threshold - delta_guard
    prices = prices.copy()
    for _ in range(region.n):
        weights = prices.max(axis=1) / prices.sum(axis=1)
        rows = np.nonzero(weights >= target)[0]
        if rows.size == 0:
            break
        leader = np.argmax(prices[rows], axis=1)
        rest = prices[rows].sum(axis=1) - prices[rows, leader]
        prices[rows, leader] = target * rest / (1.0 - target)
    return prices


def _euler_log(
    log0: np.ndarray,
    start_times: np.ndarray,
    steps: np.ndarray,
    noise: np.ndarray,
    drift: DriftSpec,
    vol: VolatilitySpec,
) -> np.ndarray:
    """Explicit Euler on the log scale for a batch.

    ``noise`` holds Brownian increments with shape (m, K, d) already scaled by
    sqrt(step). Returns log states with shape (m, K+1, n).
    """
    m, n = log0.shape
    K = steps.size
    out = np.empty((m, K + 1, n))
    out[:, 0] = log0
    state = log0.copy()
    for k in range(K):
        t = float(start_times[k])
        gamma = drift.evaluate(t, state)
        sigma = vol.matrices(t, state)
        if sigma.ndim == 2:
            diffusion = noise[:, k] @ sigma.T
        else:
            diffusion = np.einsum("mnd,md->mn", sigma, noise[:, k])
        state = state + gamma * steps[k] + diffusion
        if drift.reflect_region is not None:
            state = np.log(reflect_into_region(np.exp(state), drift.reflect_region, drift.delta_guard))
        if not np.all(np.isfinite(state)) or np.any(np.abs(state) > 700.0):
            raise SimulationDivergedError(k + 1)
        out[:, k + 1] = state
    return out


def _knots_after(grid: TimeGrid, start_time: float) -> Tuple[np.ndarray, np.ndarray]:
    """Knot times [start, grid points > start] and step lengths."""
    times = grid.times
    later = times[times > start_time + 1e-15 * grid.horizon]
    knots = np.concatenate(([start_time], later))
    return knots, np.diff(knots)


class DiffusionModel:
    """A log-price diffusion given by drift and volatility specs."""

    def __init__(self, drift: DriftSpec, vol: VolatilitySpec, name: str = "diffusion"):
        self.drift = drift
        self.vol = vol
        self.name = name

    @property
    def n(self) -> int:
        return self.vol.n

    def _noise(self, generators: Sequence[np.random.Generator], steps: np.ndarray) -> np.ndarray:
        scale = np.sqrt(steps)[:, None]
        return np.stack([gen.standard_normal((steps.size, self.vol.d)) * scale for gen in generators])

    def _check_start(self, s0) -> np.ndarray:
        s0 = np.asarray(s0, dtype=float)
        if s0.shape != (self.n,) or np.any(s0 <= 0) or not np.all(np.isfinite(s0)):
            raise PreconditionError(f"s0 must be a strictly positive vector of length {self.n}")
        return s0

    def simulate(self, grid: TimeGrid, s0, rng: RngStream) -> MarketPath:
        return simulate(grid, s0, self.drift, self.vol, rng)

    def simulate_ensemble(self, grid: TimeGrid, s0, rng: RngStream, n_paths: int) -> PathEnsemble:
        return simulate_ensemble(grid, s0, self.drift, self.vol, rng, n_paths)

    def continue_from(self, start_time: float, state, grid: TimeGrid, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
        """Simulate from ``state`` at ``start_time`` to the grid horizon.

        The first step runs to the next grid point; returns (knot times, prices).
        """
        state = self._check_start(state)
        knots, steps = _knots_after(grid, start_time)
        if steps.size == 0:
            return knots, state[None, :]
        noise = self._noise([rng.generator()], steps)
        logs = _euler_log(np.log(state)[None, :], knots[:-1], steps, noise, self.drift, self.vol)
        return knots, np.exp(logs[0])


def simulate(grid: TimeGrid, s0, drift: DriftSpec, vol: VolatilitySpec, rng: RngStream) -> MarketPath:
    """Euler-Maruyama path of the log-price SDE started at ``s0``."""
    model = DiffusionModel(drift, vol)
    s0 = model._check_start(s0)
    steps = np.full(grid.steps, grid.dt)
    noise = model._noise([rng.generator()], steps)
    logs = _euler_log(np.log(s0)[None, :], grid.times[:-1], steps, noise, drift, vol)
    return MarketPath(grid, np.exp(logs[0]))


def simulate_ensemble(
    grid: TimeGrid,
    s0,
    drift: DriftSpec,
    vol: VolatilitySpec,
    rng: RngStream,
    n_paths: int,
) -> PathEnsemble:
    """``n_paths`` independent paths; path p equals ``simulate(..., rng.substream(p))``."""
    if n_paths < 1:
        raise PreconditionError("n_paths must be >= 1")
    model = DiffusionModel(drift, vol)
    s0 = model._check_start(s0)
    steps = np.full(grid.steps, grid.dt)
    log0 = np.log(s0)

    def run(indices: range) -> np.ndarray:
        generators = [rng.substream(p).generator() for p in indices]
        noise = model._noise(generators, steps)
        start = np.broadcast_to(log0, (len(indices), log0.size))
        return np.exp(_euler_log(start, grid.times[:-1], steps, noise, drift, vol))

    values = parallel.concat(parallel.map_chunks(run, n_paths))
    logger.debug(
        "Simulated ensemble",
        extra={"extra_fields": {"paths": n_paths, "steps": grid.steps, "assets": s0.size}},
    )
    return PathEnsemble(grid, values)


def fernholz_model(
    params: FernholzParams,
    vol: VolatilitySpec,
    gamma_cap: float = DEFAULT_GAMMA_CAP,
    delta_guard: float = DEFAULT_DELTA_GUARD,
) -> DiffusionModel:
    """Fernholz diverse market with clamped pole and region reflection."""
    if vol.n != params.n:
        raise DomainError("volatility and drift dimensions differ")
    if vol.M_hi > params.M + 1e-12:
        logger.warning(
            "Volatility upper bound exceeds the drift constant M",
            extra={"extra_fields": {"M_hi": vol.M_hi, "M": params.M}},
        )
    return DiffusionModel(DriftSpec.fernholz(params, gamma_cap, delta_guard), vol, name="fernholz")


class ArctanModel:
    """Two assets S_1 = exp W_1, S_2 = exp(W_1 + arctan W_2)."""

    n = 2

    @staticmethod
    def _brownian_state(state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (2,) or np.any(state <= 0):
            raise PreconditionError("arctan market states are positive 2-vectors")
        w1 = np.log(state[0])
        spread = np.log(state[1]) - w1
        if abs(spread) >= np.pi / 2:
            raise PreconditionError("log-price spread must lie in (-pi/2, pi/2)")
        return np.array([w1, np.tan(spread)])

    @staticmethod
    def _prices(w: np.ndarray) -> np.ndarray:
        w1, w2 = w[..., 0], w[..., 1]
        return np.stack([np.exp(w1), np.exp(w1 + np.arctan(w2))], axis=-1)

    def _walk(self, w0: np.ndarray, steps: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        increments = gen.standard_normal((steps.size, 2)) * np.sqrt(steps)[:, None]
        w = np.vstack([w0, w0 + np.cumsum(increments, axis=0)])
        return self._prices(w)

    def simulate(self, grid: TimeGrid, s0=(1.0, 1.0), rng: Optional[RngStream] = None) -> MarketPath:
        if rng is None:
            raise PreconditionError("an RngStream is required")
        steps = np.full(grid.steps, grid.dt)
        return MarketPath(grid, self._walk(self._brownian_state(s0), steps, rng.generator()))

    def simulate_ensemble(self, grid: TimeGrid, s0, rng: RngStream, n_paths: int) -> PathEnsemble:
        if n_paths < 1:
            raise PreconditionError("n_paths must be >= 1")
        w0 = self._brownian_state(s0)
        steps = np.full(grid.steps, grid.dt)

        def run(indices: range) -> np.ndarray:
            return np.stack([self._walk(w0, steps, rng.substream(p).generator()) for p in indices])

        return PathEnsemble(grid, parallel.concat(parallel.map_chunks(run, n_paths)))

    def continue_from(self, start_time: float, state, grid: TimeGrid, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
        knots, steps = _knots_after(grid, start_time)
        w0 = self._brownian_state(state)
        if steps.size == 0:
            return knots, np.asarray(state, dtype=float)[None, :]
        return knots, self._walk(w0, steps, rng.generator())


def arctan_market(grid: TimeGrid, rng: RngStream) -> MarketPath:
    """The diverse two-asset market driven by two independent Brownian motions."""
    return ArctanModel().simulate(grid, (1.0, 1.0), rng)


def extend_path(
    path: MarketPath,
    extra_T: float,
    c_prime: float,
    rng: RngStream,
    vol: Optional[VolatilitySpec] = None,
) -> MarketPath:
    """Continue a path past T on the log scale by c' * B_{t-T} + X_T.

    ``rng`` should be a stream independent of the one that produced ``path``.
    """
    if extra_T < 0:
        raise PreconditionError("extra_T must be nonnegative")
    eps_lo, m_hi = (vol.eps_lo, vol.M_hi) if vol is not None else (0.0, np.inf)
    if not eps_lo <= c_prime <= m_hi or (c_prime == 0 and eps_lo > 0):
        raise PreconditionError(
            f"c_prime = {c_prime} must lie in [{eps_lo}, {m_hi}]",
            {"c_prime": c_prime, "eps_lo": eps_lo, "M_hi": m_hi},
        )
    grid = path.grid
    extra_steps = int(round(extra_T / grid.dt))
    if abs(extra_steps * grid.dt - extra_T) > 1e-9 * max(1.0, extra_T):
        raise PreconditionError("extra_T must be a multiple of the grid step")
    if extra_steps == 0:
        return path
    increments = rng.generator().standard_normal((extra_steps, path.n_assets)) * np.sqrt(grid.dt)
    logs = np.log(path.values)
    tail = logs[-1] + c_prime * np.cumsum(increments, axis=0)
    return MarketPath(grid.extended(extra_steps), np.vstack([path.values, np.exp(tail)]))
