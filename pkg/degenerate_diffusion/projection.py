"""
Projector process P_s(X): orthogonal projection of R^d onto range(sigma^T)
evaluated along state paths, with rank-change bookkeeping.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core_paths import StatePath, TimeGrid
from .errors import InvalidArgumentError, ModelError
from .models import ModelSpec

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class ProjectorSequence:
    """Projectors of shape (M, N, d, d) and their ranks (M, N)"""

    mats: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        if self.mats.ndim != 4 or self.mats.shape[2] != self.mats.shape[3]:
            raise InvalidArgumentError(f"projectors must have shape (M, N, d, d), got {self.mats.shape}")
        if self.ranks.shape != self.mats.shape[:2]:
            raise InvalidArgumentError("ranks must have shape (M, N)")

    @property
    def n_paths(self) -> int:
        return self.mats.shape[0]

    @property
    def n_steps(self) -> int:
        return self.mats.shape[1]

    @property
    def dim(self) -> int:
        return self.mats.shape[2]

    @classmethod
    def identity(cls, n_paths: int, n_steps: int, d: int) -> "ProjectorSequence":
        mats = np.broadcast_to(np.eye(d), (n_paths, n_steps, d, d))
        return cls(mats, np.full((n_paths, n_steps), d))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """P_k v_k for v of shape (M, N, d)"""
        return np.einsum("mkij,mkj->mki", self.mats, vectors)

    def subset(self, index) -> "ProjectorSequence":
        return ProjectorSequence(self.mats[index], self.ranks[index])


def _batched_projector(sigma: np.ndarray, rank_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """sigma of shape (..., n, d) -> projectors (..., d, d), ranks (...)"""
    _, s, vt = np.linalg.svd(sigma, full_matrices=True)
    d = sigma.shape[-1]
    s_max = s[..., :1]
    keep = (s > rank_tol * s_max) & (s_max > 0)
    ranks = keep.sum(axis=-1)
    mask = np.zeros(sigma.shape[:-2] + (d,), dtype=bool)
    mask[..., : keep.shape[-1]] = keep
    v = np.swapaxes(vt, -1, -2) * mask[..., None, :]
    proj = v @ np.swapaxes(v, -1, -2)
    proj = 0.5 * (proj + np.swapaxes(proj, -1, -2))
    return proj, ranks


def projector(sigma: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> Tuple[np.ndarray, int]:
    """
    Orthogonal projector onto the row space of sigma.

    Singular values above rank_tol * s_max count towards the rank; sigma = 0
    gives the zero projector with rank 0.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 1:
        sigma = sigma[None]
    if sigma.ndim != 2:
        raise InvalidArgumentError(f"sigma must be an (n, d) matrix, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise InvalidArgumentError("sigma has non-finite entries")
    if rank_tol <= 0:
        raise InvalidArgumentError("rank_tol must be positive")
    proj, rank = _batched_projector(sigma, rank_tol)
    return proj, int(rank)


def projector_path(model: ModelSpec, X: StatePath, grid: TimeGrid,
                   rank_tol: float = DEFAULT_RANK_TOL) -> ProjectorSequence:
    """P_k = projector(sigma(k, X_{<=k})) for every path and step"""
    if X.dim != model.n or X.n_steps != grid.n_steps:
        raise InvalidArgumentError(
            f"state path of shape {X.values.shape} does not fit model {model.name} on N={grid.n_steps}"
        )
    model.check_grid(grid)
    if rank_tol <= 0:
        raise InvalidArgumentError("rank_tol must be positive")
    mats = np.empty((X.n_paths, grid.n_steps, model.d, model.d))
    ranks = np.empty((X.n_paths, grid.n_steps), dtype=int)
    for k in range(grid.n_steps):
        sigma = model.eval_sigma(k, X.values[:, : k + 1])
        if not np.all(np.isfinite(sigma)):
            raise ModelError(f"{model.name}: sigma not finite at step {k}")
        mats[:, k], ranks[:, k] = _batched_projector(sigma, rank_tol)
    seq = ProjectorSequence(mats, ranks)
    changes = rank_changes(seq)
    if np.any(changes):
        logger.warning(
            f"{model.name}: projector rank changes on {int(np.count_nonzero(changes))} of {X.n_paths} paths "
            f"(max {int(changes.max())} per path)"
        )
    return seq


def rank_changes(seq: ProjectorSequence) -> np.ndarray:
    """Number of rank transitions along each path"""
    if seq.n_steps < 2:
        return np.zeros(seq.n_paths, dtype=int)
    return np.count_nonzero(np.diff(seq.ranks, axis=1), axis=1)


def rank_jump_mask(seq: ProjectorSequence) -> np.ndarray:
    """True for paths whose projector rank never changes"""
    return rank_changes(seq) == 0
