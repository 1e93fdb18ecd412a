"""
Shared plumbing for the verifiers: run options, simulated path batches and
the published list of test functionals.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np

from ..condexp import FeatureBasis
from ..core_paths import AdaptedDrift, BrownianPath, RngSpec, StatePath, TimeGrid
from ..errors import InvalidArgumentError
from ..models import ModelSpec
from ..projection import DEFAULT_RANK_TOL, ProjectorSequence, projector_path, rank_jump_mask
from ..reports import DEFAULT_ATOL
from ..simulate import DEFAULT_CHUNK_SIZE, euler_solve, sample_brownian, solve_perturbed

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240101
DEFAULT_SWEEPS = 3


@dataclass(frozen=True)
class RunOptions:
    """Knobs shared by every verifier"""

    seed: int = DEFAULT_SEED
    stream_id: int = 0
    rank_tol: float = DEFAULT_RANK_TOL
    ridge: Optional[float] = None
    clip_u: Optional[float] = None
    holdout: bool = False
    exclude_rank_jumps: bool = False
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    sweeps: int = DEFAULT_SWEEPS
    atol: float = DEFAULT_ATOL

    @property
    def rng(self) -> RngSpec:
        return RngSpec(self.seed, self.stream_id)

    def with_changes(self, **changes) -> "RunOptions":
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "stream_id": self.stream_id,
            "rank_tol": self.rank_tol,
            "ridge": self.ridge,
            "clip_u": self.clip_u,
            "holdout": self.holdout,
            "exclude_rank_jumps": self.exclude_rank_jumps,
            "sweeps": self.sweeps,
            "atol": self.atol,
        }


@dataclass(frozen=True)
class PathBatch:
    """
    One simulated batch: driver B, state X, projectors P along X, and the
    increments dW the state is read against (dB, or dZ for innovations).
    For perturbed runs ``udot`` holds the realised drift.
    """

    grid: TimeGrid
    model: ModelSpec
    B: BrownianPath
    X: StatePath
    P: ProjectorSequence
    dW: np.ndarray
    udot: Optional[np.ndarray] = None
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.B.n_paths

    @property
    def dm(self) -> np.ndarray:
        return self.P.apply(self.dW)

    def subset(self, index) -> "PathBatch":
        return PathBatch(
            grid=self.grid,
            model=self.model,
            B=self.B.subset(index),
            X=self.X.subset(index),
            P=self.P.subset(index),
            dW=self.dW[index],
            udot=None if self.udot is None else self.udot[index],
            extras={k: v[index] for k, v in self.extras.items()},
        )


def simulate_batch(model: ModelSpec, grid: TimeGrid, n_paths: int, options: RunOptions,
                   u: Optional[AdaptedDrift] = None) -> PathBatch:
    """
    Sample B and integrate X (u = None) or X^U on the same increments; the
    projector sequence is evaluated along the simulated state.
    """
    B = sample_brownian(grid, options.rng, model.d, n_paths, options.workers, options.chunk_size)
    if u is None:
        X, udot = euler_solve(model, B, None, grid), None
    else:
        solution = solve_perturbed(model, B, u, grid, options.clip_u)
        X, udot = solution.state, solution.udot
    P = projector_path(model, X, grid, options.rank_tol)
    drift = "" if u is None else f", drift '{u.name}'"
    logger.info(f"simulated {model.name}: {n_paths} paths, N={grid.n_steps}{drift}")
    return PathBatch(grid, model, B, X, P, B.increments, udot)


def keep_mask(*projectors: ProjectorSequence, enabled: bool) -> Optional[np.ndarray]:
    """Paths without projector rank jumps, or None when filtering is off"""
    if not enabled:
        return None
    mask = np.ones(projectors[0].n_paths, dtype=bool)
    for P in projectors:
        mask &= rank_jump_mask(P)
    dropped = int(np.count_nonzero(~mask))
    if dropped:
        logger.warning(f"excluding {dropped} of {mask.shape[0]} paths with projector rank changes")
    if not np.any(mask):
        raise InvalidArgumentError("every path has a projector rank change; nothing left to test")
    return mask


Functional = Callable[[StatePath], np.ndarray]


def _midpoint(X: StatePath) -> int:
    return X.n_steps // 2


TEST_FUNCTIONALS: Dict[str, Functional] = {
    "1": lambda X: np.ones(X.n_paths),
    "X_1": lambda X: X.values[:, -1, 0],
    "X_1^2": lambda X: X.values[:, -1, 0] ** 2,
    "sin X_1": lambda X: np.sin(X.values[:, -1, 0]),
    "X_0.5 X_1": lambda X: X.values[:, _midpoint(X), 0] * X.values[:, -1, 0],
}

TERMINAL_FUNCTIONALS = ("X_1", "X_1^2", "sin X_1")


def default_basis(model: ModelSpec) -> FeatureBasis:
    """Fourier terms up to the second harmonic for rotating frames, quadratics otherwise"""
    if model.name == "M3_rotating_frame":
        return FeatureBasis(kind="fourier", degree=2)
    return FeatureBasis(kind="polynomial", degree=2)
