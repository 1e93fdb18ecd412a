"""
Innovation Process and Conditional Girsanov Density
===================================================

For the perturbed state X^U driven by U = B + u, the innovation increments

    dZ_k = dB_k + (u-dot_k - q_k) dt,  q_k = P_k Ê[P_k u-dot_k | F_k(X^U)]

make M_t = sum P_k dZ_k a martingale in the filtration of X^U, and

    zeta_t = exp(-sum q_k . dZ_k - 1/2 sum |q_k|^2 dt)

is the optional projection of the Girsanov weight onto that filtration.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from ..condexp import FeatureBasis, RegressionFit, conditional_path
from ..core_paths import AdaptedDrift, BrownianPath, CameronMartinFn, TimeGrid, estimate
from ..errors import SimulationError
from ..ito import MAX_LOG_WEIGHT
from ..models import ModelSpec
from ..projection import projector_path
from ..reports import ToleranceCheck, VerificationReport, ZeroMeanCheck
from ..simulate import euler_solve, solve_perturbed
from .common import TERMINAL_FUNCTIONALS, TEST_FUNCTIONALS, PathBatch, RunOptions, default_basis, keep_mask, simulate_batch
from .representation import RECOVERY_TOLERANCE, RepresentationResult, known_integrand, relative_l2_error, represent_batch

logger = logging.getLogger(__name__)

MARTINGALE_WINDOWS = ((0.25, 0.5), (0.5, 1.0))


@dataclass(frozen=True)
class InnovationData:
    """
    Perturbed batch read against the innovation: ``batch.X`` is X^U,
    ``batch.P`` the projectors along X^U and ``batch.dW`` the increments dZ.
    """

    batch: PathBatch
    conditional: np.ndarray
    qhat: np.ndarray
    fits: List[RegressionFit]

    @property
    def dZ(self) -> np.ndarray:
        return self.batch.dW

    def subset(self, index) -> "InnovationData":
        return InnovationData(self.batch.subset(index), self.conditional[index], self.qhat[index], self.fits)


def innovation_from_batch(batch: PathBatch, basis: FeatureBasis, options: RunOptions) -> InnovationData:
    """Estimate q = P Ê[P u-dot | F(X^U)] on a perturbed batch and form dZ"""
    targets = batch.P.apply(batch.udot)
    conditional, fits = conditional_path(targets, batch.X, basis, options.ridge, options.holdout)
    qhat = batch.P.apply(conditional)
    dZ = batch.B.increments + (batch.udot - qhat) * batch.grid.dt
    return InnovationData(replace(batch, dW=dZ), conditional, qhat, fits)


def innovation_batch(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                     options: RunOptions, basis: FeatureBasis) -> InnovationData:
    batch = simulate_batch(model, grid, n_paths, options, u)
    return innovation_from_batch(batch, basis, options)


def innovation_from_driver(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, B: BrownianPath,
                           basis: Optional[FeatureBasis] = None,
                           options: Optional[RunOptions] = None) -> InnovationData:
    options = options or RunOptions()
    basis = basis or default_basis(model)
    solution = solve_perturbed(model, B, u, grid, options.clip_u)
    P = projector_path(model, solution.state, grid, options.rank_tol)
    batch = PathBatch(grid, model, B, solution.state, P, B.increments, solution.udot)
    return innovation_from_batch(batch, basis, options)


def innovation_path(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, B: BrownianPath,
                    basis: Optional[FeatureBasis] = None, options: Optional[RunOptions] = None) -> np.ndarray:
    """Innovation increments dZ of shape (M, N, d)"""
    return innovation_from_driver(model, u, grid, B, basis, options).dZ


def zeta_from_innovation(data: InnovationData) -> np.ndarray:
    """zeta at every grid time, shape (M, N+1), zeta_0 = 1"""
    q, dZ, dt = data.qhat, data.dZ, data.batch.grid.dt
    steps = -np.sum(q * dZ, axis=2) - 0.5 * np.sum(q * q, axis=2) * dt
    log_zeta = np.zeros((steps.shape[0], steps.shape[1] + 1))
    np.cumsum(steps, axis=1, out=log_zeta[:, 1:])
    if not np.all(np.isfinite(log_zeta)) or np.any(log_zeta > MAX_LOG_WEIGHT):
        bad = np.argwhere(~np.isfinite(log_zeta) | (log_zeta > MAX_LOG_WEIGHT))
        raise SimulationError("conditional Girsanov density overflows", step=int(bad[0, 1]))
    return np.exp(log_zeta)


def zeta_path(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, B: BrownianPath,
              basis: Optional[FeatureBasis] = None, options: Optional[RunOptions] = None) -> np.ndarray:
    return zeta_from_innovation(innovation_from_driver(model, u, grid, B, basis, options))


def verify_innovation_martingale(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                                 options: Optional[RunOptions] = None,
                                 basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """E[(M_t - M_s) g(X^U_s)] = 0 for g in {1, X_s, X_s^2}, per driver component"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("innovation", options.seed)
    data = innovation_batch(model, u, grid, n_paths, options, basis)
    mask = keep_mask(data.batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        data = data.subset(mask)

    increments = data.batch.P.apply(data.dZ)
    martingale = np.zeros((increments.shape[0], grid.n_steps + 1, model.d))
    np.cumsum(increments, axis=1, out=martingale[:, 1:])
    for s, t in MARTINGALE_WINDOWS:
        ks, kt = grid.step_of(s), grid.step_of(t)
        xs = data.batch.X.values[:, ks, 0]
        for g_label, g in (("1", np.ones_like(xs)), ("X_s", xs), ("X_s^2", xs ** 2)):
            for i in range(model.d):
                gap = (martingale[:, kt, i] - martingale[:, ks, i]) * g
                report.add(ZeroMeanCheck(f"M^{i + 1} on ({s}, {t}] x {g_label}", options.atol).evaluate(gap))
    report.diagnostics["drift_gap_energy"] = estimate(
        np.sum((data.batch.udot - data.qhat) ** 2, axis=(1, 2)) * grid.dt).to_dict()
    return report


def verify_zeta(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                options: Optional[RunOptions] = None,
                basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """E[zeta_1 g(X^U)] = E[g(X)] on common driver paths"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("zeta", options.seed)
    data = innovation_batch(model, u, grid, n_paths, options, basis)
    X = euler_solve(model, data.batch.B, None, grid)
    zeta = zeta_from_innovation(data)
    keep = keep_mask(data.batch.P, projector_path(model, X, grid, options.rank_tol),
                     enabled=options.exclude_rank_jumps)
    index = slice(None) if keep is None else keep

    report.add(ZeroMeanCheck("E[zeta_1] - 1", options.atol).evaluate(zeta[index, -1] - 1.0))
    for label in TERMINAL_FUNCTIONALS:
        g = TEST_FUNCTIONALS[label]
        gap = zeta[:, -1] * g(data.batch.X) - g(X)
        report.add(ZeroMeanCheck(f"zeta consistency [{label}]", options.atol).evaluate(gap[index]))
    report.diagnostics["zeta_1"] = estimate(zeta[index, -1]).to_dict()
    return report


def innovation_represent(M_target: Callable[[PathBatch], np.ndarray], model: ModelSpec, u: AdaptedDrift,
                         grid: TimeGrid, n_paths: int, basis: Optional[FeatureBasis] = None,
                         options: Optional[RunOptions] = None) -> RepresentationResult:
    """
    Represent an F(X^U)-martingale terminal value as M_0 + sum (P beta) . dZ.
    ``M_target`` is evaluated on the innovation batch (X = X^U, dW = dZ).
    """
    options = options or RunOptions()
    basis = basis or default_basis(model)
    data = innovation_batch(model, u, grid, n_paths, options, basis)
    mask = keep_mask(data.batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        data = data.subset(mask)
    return represent_batch(np.asarray(M_target(data.batch), dtype=float), data.batch, basis, options)


def verify_innovation_represent(model: ModelSpec, u: AdaptedDrift, h: CameronMartinFn, grid: TimeGrid,
                                n_paths: int, options: Optional[RunOptions] = None,
                                basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """Known-integrand recovery against dZ and the zero-integrand test"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("verify-innovation", options.seed)
    data = innovation_batch(model, u, grid, n_paths, options, basis)
    mask = keep_mask(data.batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        data = data.subset(mask)

    values, truth = known_integrand(h, data.batch)
    result = represent_batch(values, data.batch, basis, options)
    report.add(ToleranceCheck("known integrand relative L2 error", RECOVERY_TOLERANCE).evaluate(
        relative_l2_error(result.integrand, truth), data.batch.n_paths))
    constant = represent_batch(np.ones(data.batch.n_paths), data.batch, basis, options)
    report.add(ZeroMeanCheck("constant target captured energy", options.atol).evaluate(constant.captured_samples))
    report.diagnostics["known_integrand"] = result.summary()
    return report
