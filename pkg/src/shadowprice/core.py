"""Shared domain types: time grids, price paths, the diversity region, RNG streams."""

from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from .errors import DomainError, PreconditionError


def _frozen(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        k = np.arange(self.steps + 1, dtype=float)
        times = k * self.horizon / self.steps
        times[-1] = self.horizon
        return times

    def time(self, k: int) -> float:
        if k == self.steps:
            return self.horizon
        return k * self.horizon / self.steps

    def index_at_or_after(self, t: float) -> int:
        """First grid index k with t_k >= t."""
        k = int(np.searchsorted(self.times, t, side="left"))
        return min(k, self.steps)

    def index_at_or_before(self, t: float) -> int:
        """Last grid index k with t_k <= t."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return max(0, min(k, self.steps))

    def extended(self, extra_steps: int) -> "TimeGrid":
        """Grid with the same step size continued for ``extra_steps`` steps."""
        if extra_steps == 0:
            return self
        return TimeGrid(self.horizon + extra_steps * self.dt, self.steps + extra_steps)


@dataclass(frozen=True)
class MarketPath:
    """Strictly positive n-asset price path on a time grid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.steps + 1:
            raise DomainError(
                f"values must have shape (N+1, n) = ({self.grid.steps + 1}, n), got {values.shape}"
            )
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("price paths must be finite and strictly positive")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def max_weights(self) -> np.ndarray:
        """mu_(1)(t_k) at every grid point."""
        return self.values.max(axis=1) / self.values.sum(axis=1)


def log_price(path: MarketPath) -> np.ndarray:
    """Componentwise natural logarithm of a price path."""
    return np.log(path.values)


def price_from_log(grid: TimeGrid, logs: np.ndarray) -> MarketPath:
    """Inverse of :func:`log_price`."""
    return MarketPath(grid, np.exp(np.asarray(logs, dtype=float)))


@dataclass(frozen=True)
class PathEnsemble:
    """m price paths sharing a grid; values have shape (m, N+1, n)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != self.grid.steps + 1:
            raise DomainError(f"ensemble values must have shape (m, N+1, n), got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("price paths must be finite and strictly positive")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_paths(cls, paths) -> "PathEnsemble":
        paths = list(paths)
        if not paths:
            raise PreconditionError("an ensemble needs at least one path")
        return cls(paths[0].grid, np.stack([p.values for p in paths]))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self) -> Iterator[MarketPath]:
        for i in range(len(self)):
            yield self.path(i)

    @property
    def n_assets(self) -> int:
        return self.values.shape[2]

    def path(self, i: int) -> MarketPath:
        return MarketPath(self.grid, self.values[i])

    def max_weights(self) -> np.ndarray:
        """mu_(1) with shape (m, N+1)."""
        return self.values.max(axis=2) / self.values.sum(axis=2)


@dataclass(frozen=True)
class DiversityRegion:
    """O(delta): positive vectors whose largest weight is below 1 - delta."""

    delta: float
    n: int

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def threshold(self) -> float:
        return 1.0 - self.delta

    @property
    def is_empty(self) -> bool:
        return self.threshold <= 1.0 / self.n

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            return False
        return bool(x.max() / x.sum() < self.threshold)

    def contains_rows(self, values: np.ndarray) -> np.ndarray:
        """Membership of every row (last axis is the asset axis)."""
        values = np.asarray(values, dtype=float)
        positive = np.all(values > 0, axis=-1)
        weights = values.max(axis=-1) / values.sum(axis=-1)
        return positive & (weights < self.threshold)

    def _normals(self) -> Tuple[np.ndarray, float]:
        # a_i = e_i - (1 - delta) * 1; the cone {a_i . y >= 0} is a half-space
        a = np.eye(self.n) - self.threshold
        norm = float(np.sqrt(self.delta**2 + (self.n - 1) * self.threshold**2))
        return a, norm

    def distance_rows(self, values: np.ndarray) -> np.ndarray:
        """Vectorized :func:`dist_to_complement` over rows of strictly positive vectors."""
        values = np.asarray(values, dtype=float)
        a, norm = self._normals()
        to_cones = -(values @ a.T) / norm
        to_axes = values
        distance = np.minimum(to_cones.min(axis=-1), to_axes.min(axis=-1))
        return np.maximum(distance, 0.0)


def dist_to_complement(x, region: DiversityRegion) -> float:
    """Euclidean distance from x to the complement of O(delta) in R^n.

    The complement is the union of the half-spaces {y_i <= 0} and
    {y_i >= (1 - delta) * sum(y)}; the distance is the minimum over them.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != region.n:
        raise DomainError(f"x must be a vector of length {region.n}")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DomainError("x must have strictly positive finite coordinates")
    if not region.contains(x):
        return 0.0
    return float(region.distance_rows(x[None, :])[0])


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by (seed, stream_id) and a spawn path.

    ``substream(k)`` derives statistically independent children through
    numpy ``SeedSequence`` spawn keys; the same identifiers always reproduce
    the same draws.
    """

    seed: int
    stream_id: int = 0
    spawn_path: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if int(self.stream_id) < 0:
            raise DomainError("stream_id must be nonnegative")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            int(self.seed), spawn_key=(int(self.stream_id),) + tuple(int(k) for k in self.spawn_path)
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def substream(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.spawn_path + (int(k),))

    def sibling(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id, self.spawn_path)
