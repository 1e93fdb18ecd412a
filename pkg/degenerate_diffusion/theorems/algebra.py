"""
Projector algebra on random coefficient matrices, rank-deficient ones
included, plus the same identities along a simulated model path.
"""

import logging
from typing import Optional

import numpy as np

from ..core_paths import RngSpec, TimeGrid, path_generator
from ..models import ModelSpec
from ..projection import DEFAULT_RANK_TOL, projector, rank_changes
from ..reports import ToleranceCheck, VerificationReport
from .common import RunOptions, simulate_batch

logger = logging.getLogger(__name__)

ALGEBRA_TOLERANCE = 1e-9
SHAPES = ((1, 2), (2, 2), (2, 3), (3, 5))


def random_sigma(rng: np.random.Generator, n: int, d: int) -> tuple:
    """Random n x d matrix of a random rank r built from rank-r factors"""
    rank = int(rng.integers(0, min(n, d) + 1))
    sigma = rng.normal(size=(n, rank)) @ rng.normal(size=(rank, d))
    return sigma * float(np.exp(rng.normal())), rank


def verify_projector_algebra(n_matrices: int = 1000, seed: int = 0, rank_tol: float = DEFAULT_RANK_TOL,
                             model: Optional[ModelSpec] = None, grid: Optional[TimeGrid] = None,
                             n_paths: int = 1000, options: Optional[RunOptions] = None) -> VerificationReport:
    options = options or RunOptions(seed=seed, rank_tol=rank_tol)
    report = VerificationReport("projector-check", options.seed)
    rng = path_generator(RngSpec(options.seed))
    worst = {"idempotence": 0.0, "symmetry": 0.0, "sigma P = sigma": 0.0,
             "P sigma^T = sigma^T": 0.0, "kernel shift invariance": 0.0, "sigma (I - P) eta = 0": 0.0}
    rank_mismatches = 0
    for j in range(n_matrices):
        n, d = SHAPES[j % len(SHAPES)]
        sigma, rank = random_sigma(rng, n, d)
        P, r = projector(sigma, options.rank_tol)
        scale = max(np.linalg.norm(sigma), 1.0)
        xi, zeta = rng.normal(size=d), rng.normal(size=d)
        eta = (np.eye(d) - P) @ zeta
        worst["idempotence"] = max(worst["idempotence"], np.linalg.norm(P @ P - P))
        worst["symmetry"] = max(worst["symmetry"], np.linalg.norm(P - P.T))
        worst["sigma P = sigma"] = max(worst["sigma P = sigma"], np.linalg.norm(sigma @ P - sigma) / scale)
        worst["P sigma^T = sigma^T"] = max(worst["P sigma^T = sigma^T"], np.linalg.norm(P @ sigma.T - sigma.T) / scale)
        worst["kernel shift invariance"] = max(worst["kernel shift invariance"],
                                               np.linalg.norm(P @ (xi + eta) - P @ xi))
        worst["sigma (I - P) eta = 0"] = max(worst["sigma (I - P) eta = 0"],
                                             np.linalg.norm(sigma @ eta) / (scale * max(np.linalg.norm(eta), 1.0)))
        rank_mismatches += int(r != rank)

    for label, value in worst.items():
        report.add(ToleranceCheck(label, ALGEBRA_TOLERANCE).evaluate(value, n_matrices))
    report.add(ToleranceCheck("rank mismatches", 0.0).evaluate(rank_mismatches, n_matrices))

    if model is not None and grid is not None:
        batch = simulate_batch(model, grid, n_paths, options)
        mats = batch.P.mats
        idem = np.max(np.linalg.norm(mats @ mats - mats, axis=(2, 3)))
        sym = np.max(np.linalg.norm(mats - np.swapaxes(mats, 2, 3), axis=(2, 3)))
        report.add(ToleranceCheck(f"{model.name} path idempotence", ALGEBRA_TOLERANCE).evaluate(idem, n_paths))
        report.add(ToleranceCheck(f"{model.name} path symmetry", ALGEBRA_TOLERANCE).evaluate(sym, n_paths))
        changes = rank_changes(batch.P)
        report.diagnostics["paths_with_rank_changes"] = int(np.count_nonzero(changes))
        report.diagnostics["rank_histogram"] = np.bincount(batch.P.ranks.ravel(), minlength=model.d + 1).tolist()
    return report
