"""
Time Grids, Path Containers and Monte Carlo Estimates
=====================================================

Shared building blocks for every other module:

- TimeGrid: the uniform grid t_k = k/N on [0, 1]
- BrownianPath / StatePath: driver increments and state trajectories, with a
  leading path axis (M paths)
- CameronMartinFn / AdaptedDrift: the deterministic step function h-dot and
  the per-path adapted drift u-dot
- MCEstimate: mean, standard error and sample count of a statistic
- RngSpec: (seed, stream id) pair selecting a counter-based Philox stream

All containers are immutable after construction.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError
from .expressions import compile_vector, driver_values, state_values, variable_names

logger = logging.getLogger(__name__)

SEED_LIMIT = 2 ** 64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretisation of [0, 1]"""

    n_steps: int
    dt: float
    times: np.ndarray

    def step_of(self, t: float) -> int:
        """Index k with t_k = t (t must be a grid point)"""
        k = int(round(t * self.n_steps))
        if k < 0 or k > self.n_steps or abs(self.times[k] - t) > 1e-12:
            raise InvalidArgumentError(f"time {t} is not on the grid with N={self.n_steps}")
        return k


def make_grid(n_steps: int) -> TimeGrid:
    if isinstance(n_steps, bool) or not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
        raise InvalidArgumentError(f"n_steps must be a positive integer, got {n_steps!r}")
    n_steps = int(n_steps)
    times = np.arange(n_steps + 1, dtype=float) / n_steps
    times.setflags(write=False)
    return TimeGrid(n_steps=n_steps, dt=1.0 / n_steps, times=times)


@dataclass(frozen=True)
class BrownianPath:
    """Driver increments of shape (M, N, d), entries ~ Normal(0, dt)"""

    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 2:
            inc = inc[None]
        if inc.ndim != 3:
            raise InvalidArgumentError(f"increments must have shape (M, N, d), got {inc.shape}")
        if not np.all(np.isfinite(inc)):
            raise InvalidArgumentError("Brownian increments must be finite")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    def values(self) -> np.ndarray:
        """B at every grid time, shape (M, N+1, d), B_0 = 0"""
        out = np.zeros((self.n_paths, self.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def terminal(self) -> np.ndarray:
        return self.increments.sum(axis=1)

    def subset(self, index) -> "BrownianPath":
        return BrownianPath(self.increments[index])


@dataclass(frozen=True)
class StatePath:
    """State trajectories of shape (M, N+1, n)"""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[None]
        if vals.ndim != 3:
            raise InvalidArgumentError(f"state values must have shape (M, N+1, n), got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0, 0]

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def at(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def subset(self, index) -> "StatePath":
        return StatePath(self.values[index])


@dataclass(frozen=True)
class CameronMartinFn:
    """Step function h-dot of shape (N, d), constant on each grid cell"""

    hdot: np.ndarray
    h_norm_sq: float = field(init=False)

    def __post_init__(self):
        hdot = np.asarray(self.hdot, dtype=float)
        if hdot.ndim != 2:
            raise InvalidArgumentError(f"hdot must have shape (N, d), got {hdot.shape}")
        if not np.all(np.isfinite(hdot)):
            raise InvalidArgumentError("hdot must be finite")
        hdot.setflags(write=False)
        object.__setattr__(self, "hdot", hdot)
        object.__setattr__(self, "h_norm_sq", _norm_sq(hdot, 1.0 / hdot.shape[0]))

    @classmethod
    def zero(cls, grid: TimeGrid, d: int) -> "CameronMartinFn":
        return cls(np.zeros((grid.n_steps, d)))

    @classmethod
    def constant(cls, grid: TimeGrid, value: Sequence[float]) -> "CameronMartinFn":
        value = np.asarray(value, dtype=float)
        return cls(np.tile(value, (grid.n_steps, 1)))

    @classmethod
    def from_expression(cls, source: Union[str, Sequence], grid: TimeGrid, d: int) -> "CameronMartinFn":
        """h-dot given as a vector expression in t, sampled at left endpoints"""
        components = compile_vector(source, ["t"], d)
        t = grid.times[:-1]
        return cls(np.stack([c(t.shape, t=t) for c in components], axis=1))


def _norm_sq(hdot: np.ndarray, dt: float) -> float:
    return float(np.sum(hdot * hdot) * dt)


def cm_norm_sq(h: CameronMartinFn, grid: TimeGrid) -> float:
    """Cameron-Martin norm |h|_H^2 = sum_k |h-dot_k|^2 dt"""
    if h.hdot.shape[0] != grid.n_steps:
        raise InvalidArgumentError(
            f"h defined on {h.hdot.shape[0]} cells but grid has {grid.n_steps}"
        )
    return _norm_sq(h.hdot, grid.dt)


DriftCallback = Callable[[int, np.ndarray, Optional[np.ndarray]], np.ndarray]


@dataclass(frozen=True)
class AdaptedDrift:
    """
    Adapted drift u-dot.

    ``func(k, db_hist, x_hist)`` returns the (M, d) drift at step k from the
    driver increments strictly before step k (db_hist, shape (M, k, d)) and,
    when ``uses_state`` is set, the state history up to and including step k
    (x_hist, shape (M, k+1, n)). ``state_only`` marks drifts that read the
    state history alone, i.e. drifts adapted to the filtration of the state.
    """

    d: int
    func: DriftCallback
    uses_state: bool = False
    state_only: bool = False
    name: str = "u"

    def __call__(self, k: int, db_hist: np.ndarray, x_hist: Optional[np.ndarray] = None) -> np.ndarray:
        if self.uses_state and x_hist is None:
            raise InvalidArgumentError(f"drift '{self.name}' needs the state history")
        n_paths = db_hist.shape[0]
        out = np.asarray(self.func(k, db_hist, x_hist), dtype=float)
        out = np.broadcast_to(out, (n_paths, self.d))
        if not np.all(np.isfinite(out)):
            raise InvalidArgumentError(f"drift '{self.name}' returned non-finite values at step {k}")
        return out

    def at_step(self, k: int, increments: np.ndarray, state: Optional[np.ndarray] = None) -> np.ndarray:
        """Drift at step k from full (M, N, d) increments and (M, N+1, n) state, windowed to what F_k allows"""
        x_hist = state[:, : k + 1] if self.uses_state and state is not None else None
        return self(k, increments[:, :k], x_hist)

    @classmethod
    def zero(cls, d: int) -> "AdaptedDrift":
        return cls(d=d, func=lambda k, db, x: np.zeros(d), state_only=True, name="zero")

    @classmethod
    def constant(cls, value: Sequence[float]) -> "AdaptedDrift":
        value = np.asarray(value, dtype=float)
        return cls(d=value.shape[0], func=lambda k, db, x: value, state_only=True, name=f"constant{tuple(value)}")

    @classmethod
    def from_array(cls, values: np.ndarray, name: str = "precomputed") -> "AdaptedDrift":
        """Drift read from precomputed per-path values of shape (M, N, d)"""
        values = np.asarray(values, dtype=float)
        if values.ndim != 3:
            raise InvalidArgumentError(f"drift values must have shape (M, N, d), got {values.shape}")

        def func(k, db, x):
            if db.shape[0] != values.shape[0]:
                raise InvalidArgumentError(
                    f"precomputed drift has {values.shape[0]} paths, batch has {db.shape[0]}"
                )
            return values[:, k]

        return cls(d=values.shape[2], func=func, name=name)

    @classmethod
    def from_state(cls, func: Callable[[int, np.ndarray], np.ndarray], d: int, name: str = "state-drift") -> "AdaptedDrift":
        """Drift that reads only the state history: func(k, x_hist) -> (M, d)"""
        return cls(d=d, func=lambda k, db, x: func(k, x), uses_state=True, state_only=True, name=name)

    @classmethod
    def from_expression(cls, source: Union[str, Sequence], grid: TimeGrid, n: int, d: int) -> "AdaptedDrift":
        """
        Drift from a vector expression in t, x1..xn (current state) and
        w1..wd (current driver value B_t).
        """
        components = compile_vector(source, variable_names(n, d, driver=True), d)
        uses_driver = any(c.uses("w") for c in components)
        uses_state = any(c.uses("x") for c in components)

        def func(k, db, x):
            n_paths = db.shape[0]
            values = {"t": grid.times[k]}
            if uses_driver:
                values.update(driver_values(db.sum(axis=1)))
            if uses_state:
                values.update(state_values(grid.times[k], x[:, -1]))
            return np.stack([c((n_paths,), **values) for c in components], axis=1)

        label = source if isinstance(source, str) else ", ".join(map(str, source))
        return cls(d=d, func=func, uses_state=uses_state, state_only=not uses_driver, name=label)


def check_adaptedness(u: AdaptedDrift, B: BrownianPath, k: int, state: Optional[np.ndarray] = None) -> bool:
    """
    Perturbation test at step k on the full driver (and state) arrays, read
    through the same window the solver uses. Resampling increments from step
    k on, and shifting state values after step k, must leave the drift
    unchanged. A state-only drift must also ignore every driver increment,
    including the ones before k.
    """
    rng = np.random.default_rng(k)
    inc = np.array(B.increments)
    later = inc.copy()
    later[:, k:] = rng.normal(0.0, 1.0, later[:, k:].shape)
    x = x_later = None
    if state is not None:
        x = np.array(state)
        x_later = x.copy()
        x_later[:, k + 1:] += 1.0
    before = u.at_step(k, inc, x)
    unchanged = np.array_equal(before, u.at_step(k, later, x_later))
    if u.state_only:
        scrambled = rng.normal(0.0, 1.0, inc.shape)
        unchanged = unchanged and np.array_equal(before, u.at_step(k, scrambled, x))
    return bool(unchanged)


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate of an expectation"""

    mean: float
    std_error: float
    n_samples: int

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples}


def estimate(values: np.ndarray) -> MCEstimate:
    """Sample mean and standard error sample_std / sqrt(n) of per-path values"""
    values = np.asarray(values, dtype=float).ravel()
    n = values.shape[0]
    if n < 1:
        raise InvalidArgumentError("cannot estimate from zero samples")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return MCEstimate(mean=mean, std_error=std / np.sqrt(n), n_samples=n)


@dataclass(frozen=True)
class RngSpec:
    """Counter-based random stream selector"""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < SEED_LIMIT:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= int(self.stream_id) < SEED_LIMIT:
            raise InvalidArgumentError(f"stream_id must be non-negative, got {self.stream_id}")

    def stream(self, offset: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream_id + offset)


def path_generator(rng: RngSpec) -> np.random.Generator:
    """Philox generator keyed by the seed, stream id in the high counter word"""
    bit_generator = np.random.Philox(key=int(rng.seed), counter=int(rng.stream_id) << 192)
    return np.random.Generator(bit_generator)
