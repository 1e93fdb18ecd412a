"""
Euler-Maruyama Simulation
=========================

Samples Brownian drivers from per-path Philox streams, integrates the state
equation with and without an adapted drift perturbation (common random
numbers), and computes Girsanov weights.

Path i of a batch always draws from stream ``rng.stream_id + i``, so results
do not depend on how the batch is split across worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .core_paths import AdaptedDrift, BrownianPath, RngSpec, StatePath, TimeGrid, path_generator
from .errors import InvalidArgumentError, SimulationError
from .ito import stochastic_exponential
from .models import ModelSpec

logger = logging.getLogger(__name__)

OVERFLOW_LIMIT = 1e12
DEFAULT_CHUNK_SIZE = 4096


@dataclass(frozen=True)
class PerturbedSolution:
    """State path of X^U together with the drift realised along it"""

    state: StatePath
    udot: np.ndarray
    clip: Optional[float] = None

    def energy(self, dt: float) -> np.ndarray:
        """sum_k |u-dot_k|^2 dt per path"""
        return np.sum(self.udot * self.udot, axis=(1, 2)) * dt


def _sample_chunk(grid: TimeGrid, rng: RngSpec, d: int, first: int, count: int) -> np.ndarray:
    scale = np.sqrt(grid.dt)
    out = np.empty((count, grid.n_steps, d))
    for j in range(count):
        out[j] = path_generator(rng.stream(first + j)).normal(0.0, scale, (grid.n_steps, d))
    return out


def sample_brownian(grid: TimeGrid, rng: RngSpec, d: int, n_paths: int = 1,
                    workers: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE) -> BrownianPath:
    """Independent Normal(0, dt) increments of shape (n_paths, N, d)"""
    if d < 1 or n_paths < 1:
        raise InvalidArgumentError("need d >= 1 and n_paths >= 1")
    if chunk_size < 1 or workers < 1:
        raise InvalidArgumentError("chunk_size and workers must be positive")
    starts = list(range(0, n_paths, chunk_size))
    counts = [min(chunk_size, n_paths - s) for s in starts]
    logger.debug(f"sampling {n_paths} paths x {grid.n_steps} steps x {d} dims in {len(starts)} chunks")
    if workers == 1 or len(starts) == 1:
        parts = [_sample_chunk(grid, rng, d, s, c) for s, c in zip(starts, counts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda sc: _sample_chunk(grid, rng, d, *sc), zip(starts, counts)))
    return BrownianPath(np.concatenate(parts, axis=0))


def _check_shapes(model: ModelSpec, B: BrownianPath, grid: TimeGrid):
    model.check_grid(grid)
    if B.dim != model.d:
        raise InvalidArgumentError(f"driver dimension {B.dim} but model {model.name} has d={model.d}")
    if B.n_steps != grid.n_steps:
        raise InvalidArgumentError(f"driver has {B.n_steps} steps, grid has {grid.n_steps}")


def _clipped(uk: np.ndarray, energy: np.ndarray, clip: Optional[float], dt: float) -> np.ndarray:
    if clip is None:
        return uk
    uk = uk * (energy <= clip)[:, None]
    energy += np.sum(uk * uk, axis=1) * dt
    return uk


def _integrate(model: ModelSpec, B: BrownianPath, u: Optional[AdaptedDrift], grid: TimeGrid,
               clip: Optional[float]) -> PerturbedSolution:
    _check_shapes(model, B, grid)
    if u is not None and u.d != model.d:
        raise InvalidArgumentError(f"drift dimension {u.d} does not match d={model.d}")
    if clip is not None and clip < 0:
        raise InvalidArgumentError("clip level must be non-negative")
    inc = B.increments
    M, N = B.n_paths, grid.n_steps
    X = np.empty((M, N + 1, model.n))
    X[:, 0] = model.x0
    udot = np.zeros((M, N, model.d))
    energy = np.zeros(M)
    for k in range(N):
        hist = X[:, : k + 1]
        sigma = model.eval_sigma(k, hist)
        drift = model.eval_b(k, hist)
        dU = inc[:, k]
        if u is not None:
            uk = _clipped(u.at_step(k, inc, X), energy, clip, grid.dt)
            udot[:, k] = uk
            dU = dU + uk * grid.dt
        X[:, k + 1] = X[:, k] + drift * grid.dt + np.einsum("mnd,md->mn", sigma, dU)
        if not np.all(np.isfinite(X[:, k + 1])) or np.any(np.abs(X[:, k + 1]) > OVERFLOW_LIMIT):
            raise SimulationError(f"{model.name}: state overflow at step {k + 1}", step=k + 1)
    return PerturbedSolution(StatePath(X), udot, clip)


def euler_solve(model: ModelSpec, B: BrownianPath, u: Optional[AdaptedDrift], grid: TimeGrid,
                clip: Optional[float] = None) -> StatePath:
    """
    X_{k+1} = X_k + b dt + sigma (dB_k + u-dot_k dt); with u = None this is X,
    otherwise X^U on the same increments.
    """
    return _integrate(model, B, u, grid, clip).state


def solve_perturbed(model: ModelSpec, B: BrownianPath, u: AdaptedDrift, grid: TimeGrid,
                    clip: Optional[float] = None) -> PerturbedSolution:
    """X^U plus the realised (possibly clipped) drift values"""
    return _integrate(model, B, u, grid, clip)


def realize_drift(u: AdaptedDrift, B: BrownianPath, grid: TimeGrid, state: Optional[StatePath] = None,
                  clip: Optional[float] = None) -> np.ndarray:
    """Drift values (M, N, d) along a fixed driver (and state) path"""
    if u.d != B.dim or B.n_steps != grid.n_steps:
        raise InvalidArgumentError("drift does not match the Brownian batch")
    if u.uses_state and state is None:
        raise InvalidArgumentError(f"drift '{u.name}' needs a state path")
    inc = B.increments
    out = np.zeros(inc.shape)
    energy = np.zeros(B.n_paths)
    values = None if state is None else state.values
    for k in range(grid.n_steps):
        out[:, k] = _clipped(u.at_step(k, inc, values), energy, clip, grid.dt)
    return out


def girsanov_weight(u: AdaptedDrift, B: BrownianPath, grid: TimeGrid, sign: int = 1,
                    state: Optional[StatePath] = None, clip: Optional[float] = None) -> np.ndarray:
    """exp(sign sum u-dot . dB - 1/2 sum |u-dot|^2 dt) per path"""
    if sign not in (1, -1):
        raise InvalidArgumentError("sign must be +1 or -1")
    udot = realize_drift(u, B, grid, state, clip)
    return stochastic_exponential(sign * udot, B.increments, grid.dt)


def paths_frame(X: StatePath, B: BrownianPath, grid: TimeGrid, max_paths: Optional[int] = None) -> pd.DataFrame:
    """
    Long-format path dump with columns path, step, t, x_1..x_n, db_1..db_d.
    db at step k is the increment from t_k to t_{k+1} (empty on the last row).
    """
    n_paths = X.n_paths if max_paths is None else min(max_paths, X.n_paths)
    steps = np.arange(grid.n_steps + 1)
    frame = {
        "path": np.repeat(np.arange(n_paths), grid.n_steps + 1),
        "step": np.tile(steps, n_paths),
        "t": np.tile(grid.times, n_paths),
    }
    for i in range(X.dim):
        frame[f"x_{i + 1}"] = X.values[:n_paths, :, i].ravel()
    padded = np.full((n_paths, grid.n_steps + 1, B.dim), np.nan)
    padded[:, :-1] = B.increments[:n_paths]
    for j in range(B.dim):
        frame[f"db_{j + 1}"] = padded[:, :, j].ravel()
    return pd.DataFrame(frame)
