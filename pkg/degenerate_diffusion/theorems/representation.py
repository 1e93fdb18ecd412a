"""
Martingale Representation on the Projected Driver
=================================================

represent_functional recovers the projected integrand P_k xi_k with

    F = E[F] + sum_k (P_k xi_k) . dW_k + residual

by per-step martingale-difference regressions: at step k the target
R_k . dW_k / dt (R_k: what the other steps leave unexplained) is regressed on
features of X_{<=k} and projected. Backfitting sweeps shrink R_k to
residual size; two-fold cross-fitting keeps every reported number out of
sample.

Also hosts the generator (martingale problem) and projection-minimality
verifiers.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..condexp import FeatureBasis, LeastSquaresSolution, check_sample_size, least_squares
from ..core_paths import CameronMartinFn, MCEstimate, StatePath, TimeGrid, estimate
from ..errors import InvalidArgumentError
from ..models import ModelSpec, apply_generator, euler_generator, standard_test_functions
from ..projection import ProjectorSequence
from ..reports import ToleranceCheck, VerificationReport, ZeroMeanCheck
from .common import TEST_FUNCTIONALS, PathBatch, RunOptions, default_basis, keep_mask, simulate_batch

logger = logging.getLogger(__name__)

WARN_RELATIVE_RESIDUAL = 0.2
RECOVERY_TOLERANCE = 0.05
PROJECTION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RepresentationResult:
    """Recovered projected integrand and its residual diagnostics"""

    integrand: np.ndarray
    coefficients: np.ndarray
    mean: MCEstimate
    residual: np.ndarray
    residual_l2: float
    target_variance: float
    energy: MCEstimate
    captured_samples: np.ndarray
    scale: float

    @property
    def captured(self) -> MCEstimate:
        """E[(F - mean) sum (P xi) . dW], out of sample; zero when nothing is representable"""
        return estimate(self.captured_samples)

    @property
    def target_std(self) -> float:
        return float(np.sqrt(self.target_variance))

    @property
    def relative_residual(self) -> float:
        return self.residual_l2 / self.target_std if self.target_std > 0 else 0.0

    def summary(self) -> dict:
        return {
            "mean": self.mean.to_dict(),
            "residual_l2": self.residual_l2,
            "target_std": self.target_std,
            "relative_residual": self.relative_residual,
            "energy": self.energy.to_dict(),
            "captured": self.captured.to_dict(),
            "scale": self.scale,
        }


def _project(P: np.ndarray, xi: np.ndarray) -> np.ndarray:
    return np.einsum("mij,mj->mi", P, xi)


def _backfit(values: np.ndarray, X: StatePath, dW: np.ndarray, P: ProjectorSequence, grid: TimeGrid,
             basis: FeatureBasis, options: RunOptions) -> Tuple[List[LeastSquaresSolution], float]:
    mean = float(np.mean(values))
    centred = values - mean
    n_paths, n_steps = dW.shape[0], dW.shape[1]
    contrib = np.zeros((n_paths, n_steps))
    total = np.zeros(n_paths)
    solutions: List[Optional[LeastSquaresSolution]] = [None] * n_steps
    for sweep in range(max(1, options.sweeps)):
        for k in range(n_steps):
            design = basis.features(X, k)
            rest = centred - (total - contrib[:, k])
            target = rest[:, None] * dW[:, k] / grid.dt
            solution = least_squares(design, target, options.ridge)
            new = np.sum(_project(P.mats[:, k], solution.predict(design)) * dW[:, k], axis=1)
            total += new - contrib[:, k]
            contrib[:, k] = new
            solutions[k] = solution
        logger.debug(f"backfitting sweep {sweep}: residual std {float(np.std(centred - total)):.4g}")
    return solutions, mean


def represent_values(values: np.ndarray, X: StatePath, dW: np.ndarray, P: ProjectorSequence, grid: TimeGrid,
                     basis: FeatureBasis, options: Optional[RunOptions] = None) -> RepresentationResult:
    """Representation of per-path values against increments dW with projectors P along X"""
    options = options or RunOptions()
    values = np.asarray(values, dtype=float)
    n_paths = values.shape[0]
    if values.ndim != 1 or dW.shape[0] != n_paths or X.n_paths != n_paths or P.n_paths != n_paths:
        raise InvalidArgumentError("functional values, state, increments and projectors disagree on path count")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("functional has non-finite values; it must be square-integrable")
    check_sample_size(basis, n_paths // 2, X.dim, grid.n_steps)

    half = n_paths // 2
    folds = [(slice(0, half), slice(half, n_paths)), (slice(half, n_paths), slice(0, half))]
    integrand = np.empty(dW.shape)
    fold_mean = np.empty(n_paths)
    coefficients = []
    for fit_index, eval_index in folds:
        solutions, mean = _backfit(values[fit_index], X.subset(fit_index), dW[fit_index],
                                   P.subset(fit_index), grid, basis, options)
        X_eval = X.subset(eval_index)
        for k, solution in enumerate(solutions):
            xi = solution.predict(basis.features(X_eval, k))
            integrand[eval_index, k] = _project(P.mats[eval_index, k], xi)
        fold_mean[eval_index] = mean
        full = np.array(np.stack([s.coef for s in solutions]))
        full[:, 0] += np.stack([s.intercept for s in solutions])
        coefficients.append(full)

    stochastic = np.einsum("mkd,mkd->m", integrand, dW)
    captured = (values - fold_mean) * stochastic

    # one scalar calibration keeps the residual no larger than the target spread
    centred = values - values.mean()
    spread = float(np.var(stochastic))
    scale = float(np.mean(centred * (stochastic - stochastic.mean())) / spread) if spread > 1e-300 else 0.0
    integrand *= scale
    residual = centred - scale * stochastic
    residual = residual - residual.mean()

    result = RepresentationResult(
        integrand=integrand,
        coefficients=0.5 * (coefficients[0] + coefficients[1]),
        mean=estimate(values),
        residual=residual,
        residual_l2=float(np.std(residual)),
        target_variance=float(np.var(values)),
        energy=estimate(np.sum(integrand * integrand, axis=(1, 2)) * grid.dt),
        captured_samples=captured,
        scale=scale,
    )
    if result.target_std > 0 and result.relative_residual > WARN_RELATIVE_RESIDUAL:
        logger.warning(f"representation residual is {100 * result.relative_residual:.1f}% of the target std")
    return result


def represent_batch(values: np.ndarray, batch: PathBatch, basis: FeatureBasis,
                    options: Optional[RunOptions] = None) -> RepresentationResult:
    return represent_values(values, batch.X, batch.dW, batch.P, batch.grid, basis, options)


def represent_functional(F: Callable[[PathBatch], np.ndarray], model: ModelSpec, grid: TimeGrid, n_paths: int,
                         basis: Optional[FeatureBasis] = None,
                         options: Optional[RunOptions] = None) -> RepresentationResult:
    """Simulate X, evaluate F on the batch and represent it against dm = P dB"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    batch = simulate_batch(model, grid, n_paths, options)
    mask = keep_mask(batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        batch = batch.subset(mask)
    return represent_batch(np.asarray(F(batch), dtype=float), batch, basis, options)


def known_integrand(h: CameronMartinFn, batch: PathBatch) -> Tuple[np.ndarray, np.ndarray]:
    """F = sum_k h-dot_k . dm_k and its projected integrand P_k h-dot_k"""
    hdot = np.broadcast_to(h.hdot, batch.dW.shape)
    projected = batch.P.apply(hdot)
    return np.einsum("mkd,mkd->m", projected, batch.dW), projected


def relative_l2_error(estimate_: np.ndarray, truth: np.ndarray) -> float:
    """sqrt(E sum |a - b|^2 / E sum |b|^2); absolute when the truth vanishes"""
    err = float(np.mean(np.sum((estimate_ - truth) ** 2, axis=(1, 2))))
    norm = float(np.mean(np.sum(truth ** 2, axis=(1, 2))))
    return float(np.sqrt(err / norm)) if norm > 0 else float(np.sqrt(err))


def verify_representation(model: ModelSpec, h: CameronMartinFn, grid: TimeGrid, n_paths: int,
                          options: Optional[RunOptions] = None,
                          basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """Known-integrand recovery, zero-integrand test and residual bounds on the test functionals"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("represent", options.seed)
    batch = simulate_batch(model, grid, n_paths, options)
    mask = keep_mask(batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        batch = batch.subset(mask)

    values, truth = known_integrand(h, batch)
    result = represent_batch(values, batch, basis, options)
    report.add(ToleranceCheck("known integrand relative L2 error", RECOVERY_TOLERANCE).evaluate(
        relative_l2_error(result.integrand, truth), batch.n_paths))
    report.diagnostics["known_integrand"] = result.summary()

    constant = represent_batch(np.ones(batch.n_paths), batch, basis, options)
    report.add(ZeroMeanCheck("constant functional captured energy", options.atol).evaluate(
        constant.captured_samples))

    for label, functional in TEST_FUNCTIONALS.items():
        if label == "1":
            continue
        res = represent_batch(functional(batch.X), batch, basis, options)
        report.add(ToleranceCheck(f"residual <= target std [{label}]", 1e-10).evaluate(
            res.residual_l2 - res.target_std, batch.n_paths))
        report.diagnostics[f"functional {label}"] = res.summary()
    return report


def verify_projection_minimality(model: ModelSpec, grid: TimeGrid, n_paths: int,
                                 options: Optional[RunOptions] = None,
                                 basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """
    Integrands in kernel(sigma) carry nothing representable: both
    sum (P eta) . dB and sum eta . dB leave zero captured energy, and P xi is
    unchanged by kernel shifts of xi.
    """
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("projection-minimality", options.seed)
    batch = simulate_batch(model, grid, n_paths, options)
    d = model.d
    identity = np.eye(d)
    eta = np.einsum("mkij,j->mki", identity - batch.P.mats, np.ones(d))

    for label, values in (
        ("projected kernel integrand", np.einsum("mkd,mkd->m", batch.P.apply(eta), batch.dW)),
        ("kernel integrand", np.einsum("mkd,mkd->m", eta, batch.dW)),
    ):
        res = represent_batch(values, batch, basis, options)
        report.add(ZeroMeanCheck(f"{label} captured energy", options.atol).evaluate(res.captured_samples))

    xi = np.cos(batch.X.values[:, :-1, :1]) * np.ones(d)
    shift = np.max(np.abs(batch.P.apply(xi + eta) - batch.P.apply(xi)))
    report.add(ToleranceCheck("P xi invariant under kernel shifts", PROJECTION_TOLERANCE).evaluate(
        shift, batch.n_paths))

    worst = 0.0
    for k in range(grid.n_steps):
        sigma = model.eval_sigma(k, batch.X.values[:, : k + 1])
        leak = np.einsum("mnd,md->mn", sigma, eta[:, k])
        scale = np.linalg.norm(sigma, axis=(1, 2)) * np.linalg.norm(eta[:, k], axis=1) + 1e-300
        worst = max(worst, float(np.max(np.linalg.norm(leak, axis=1) / scale)))
    report.add(ToleranceCheck("sigma (I - P) eta = 0", PROJECTION_TOLERANCE).evaluate(worst, batch.n_paths))
    return report


def verify_martingale_problem(model: ModelSpec, grid: TimeGrid, n_paths: int,
                              options: Optional[RunOptions] = None) -> VerificationReport:
    """
    f(X_t) - f(x0) - sum_{k < t/dt} L_dt f(X_{<=k}) dt has mean zero for the
    Euler chain's one-step generator L_dt; the gap to the continuous
    generator L is reported as a diagnostic.
    """
    options = options or RunOptions()
    report = VerificationReport("martingale-problem", options.seed)
    batch = simulate_batch(model, grid, n_paths, options)
    X = batch.X.values
    for f in standard_test_functions(model.n):
        discrete = np.zeros((batch.n_paths, grid.n_steps + 1))
        continuous = np.zeros((batch.n_paths, grid.n_steps + 1))
        for k in range(grid.n_steps):
            hist = X[:, : k + 1]
            discrete[:, k + 1] = discrete[:, k] + euler_generator(model, f, k, hist, grid.dt) * grid.dt
            continuous[:, k + 1] = continuous[:, k] + apply_generator(model, f, k, hist) * grid.dt
        for t in (0.5, 1.0):
            k = grid.step_of(t)
            increment = f.f(X[:, k]) - f.f(X[:, 0])
            report.add(ZeroMeanCheck(f"{f.name} at t={t}", options.atol).evaluate(increment - discrete[:, k]))
            report.diagnostics[f"{f.name} at t={t} continuous generator gap"] = estimate(
                increment - continuous[:, k]).to_dict()
    return report
