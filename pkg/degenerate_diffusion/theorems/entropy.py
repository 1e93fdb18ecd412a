"""
Relative Entropy and the Causal Monge-Ampere Loop
=================================================

H(X^U(P) | X(P)) = 1/2 E sum |P_k Ê[u-dot_k | F_k(X^U)]|^2 dt, checked
against a direct estimate E[log l o X^U] whenever the density l is known in
closed form: for drifts reading the state alone,

    log l o X^U = sum (P u-dot) . dU - 1/2 sum |P u-dot|^2 dt,  dU = dB + u-dot dt.

monge_ampere_solve builds X^U with u-dot = -v-dot o X^U from a target
state-adapted v; monge_ampere_residual checks that the pair solves the
causal Monge-Ampere equation P (v-dot + Ê[u-dot | F(X^U)]) = 0.
"""

import logging
from typing import Iterable, Optional, Tuple

import numpy as np

from ..condexp import FeatureBasis
from ..core_paths import AdaptedDrift, BrownianPath, MCEstimate, StatePath, TimeGrid, estimate
from ..errors import InvalidArgumentError
from ..models import ModelSpec
from ..reports import LowerBoundCheck, ToleranceCheck, UpperBoundCheck, VerificationReport, ZeroMeanCheck
from ..simulate import euler_solve, realize_drift, sample_brownian
from .common import PathBatch, RunOptions, default_basis, keep_mask, simulate_batch
from .innovation import InnovationData, innovation_batch, zeta_from_innovation

logger = logging.getLogger(__name__)


def _formula_samples(data: InnovationData) -> np.ndarray:
    return 0.5 * np.sum(data.qhat * data.qhat, axis=(1, 2)) * data.batch.grid.dt


def log_density(batch: PathBatch, drift: np.ndarray) -> np.ndarray:
    """sum (P w) . (P dU) - 1/2 sum |P w|^2 dt for a state-adapted drift w along X^U"""
    projected = batch.P.apply(drift)
    dU = batch.B.increments + batch.udot * batch.grid.dt
    return np.sum(projected * batch.P.apply(dU), axis=(1, 2)) - 0.5 * np.sum(projected ** 2, axis=(1, 2)) * batch.grid.dt


def entropy_formula(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                    basis: Optional[FeatureBasis] = None, options: Optional[RunOptions] = None) -> MCEstimate:
    """Sample mean of 1/2 sum |P Ê[u-dot | F(X^U)]|^2 dt"""
    options = options or RunOptions()
    basis = basis or default_basis(model)
    return estimate(_formula_samples(innovation_batch(model, u, grid, n_paths, options, basis)))


def entropy_direct(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                   options: Optional[RunOptions] = None) -> MCEstimate:
    """E[log l o X^U]; only defined for drifts adapted to the state filtration"""
    options = options or RunOptions()
    if not u.state_only:
        raise InvalidArgumentError(f"drift '{u.name}' reads the driver; its density is not known in closed form")
    batch = simulate_batch(model, grid, n_paths, options, u)
    return estimate(log_density(batch, batch.udot))


def entropy_inequality_check(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                             options: Optional[RunOptions] = None, basis: Optional[FeatureBasis] = None,
                             clip_levels: Iterable[Optional[float]] = (),
                             expected: Optional[float] = None) -> VerificationReport:
    """
    Direct entropy never exceeds the formula, at the configured clip level
    and at every extra level in ``clip_levels``. Drifts that read the driver
    are held to the bound 1/2 E sum |P u-dot|^2 dt instead. With
    ``expected`` set, the unclipped formula is also compared with that value,
    and a drift living in the kernel of sigma must leave X^U equal to X.
    """
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("entropy", options.seed)
    levels = [options.clip_u] + [c for c in clip_levels if c != options.clip_u]
    for level in levels:
        tag = "" if level is None else f" [clip={level}]"
        data = innovation_batch(model, u, grid, n_paths, options.with_changes(clip_u=level), basis)
        mask = keep_mask(data.batch.P, enabled=options.exclude_rank_jumps)
        if mask is not None:
            data = data.subset(mask)
        formula = _formula_samples(data)
        report.add(LowerBoundCheck(f"entropy formula{tag}", 0.0, options.atol).evaluate(formula))
        if u.state_only:
            direct = log_density(data.batch, data.batch.udot)
            report.add(UpperBoundCheck(f"direct - formula{tag}", 0.0, options.atol).evaluate(direct - formula))
            report.diagnostics[f"direct{tag}"] = estimate(direct).to_dict()
        else:
            projected = data.batch.P.apply(data.batch.udot)
            bound = 0.5 * np.sum(projected * projected, axis=(1, 2)) * grid.dt
            report.add(UpperBoundCheck(f"formula - projected drift energy{tag}", 0.0, options.atol).evaluate(
                formula - bound))
        report.diagnostics[f"formula{tag}"] = estimate(formula).to_dict()
        if level is None and expected is not None:
            report.add(ZeroMeanCheck("entropy formula - expected", options.atol).evaluate(formula - expected))

    kernel = simulate_batch(model, grid, n_paths, options, u)
    if not np.any(kernel.P.apply(kernel.udot)):
        plain = euler_solve(model, kernel.B, None, grid)
        report.add(ToleranceCheck("kernel drift leaves X unchanged", 0.0).evaluate(
            float(np.max(np.abs(kernel.X.values - plain.values))), kernel.n_paths))
    return report


def monge_ampere_drift(v: AdaptedDrift) -> AdaptedDrift:
    """u-dot = -v-dot o X^U"""
    if not v.state_only:
        raise InvalidArgumentError(f"target drift '{v.name}' must be adapted to the state filtration")
    d = v.d

    def minus_v(k, x_hist):
        return -v(k, np.zeros((x_hist.shape[0], 0, d)), x_hist)

    return AdaptedDrift.from_state(minus_v, d, name=f"-({v.name})")


def monge_ampere_solve(v: AdaptedDrift, model: ModelSpec, grid: TimeGrid, B: BrownianPath,
                       options: Optional[RunOptions] = None) -> Tuple[StatePath, AdaptedDrift]:
    """Integrate dX^U = sigma (dB - v-dot o X^U dt) + b dt from the same initial condition"""
    options = options or RunOptions()
    u = monge_ampere_drift(v)
    return euler_solve(model, B, u, grid, options.clip_u), u


def mismatched_drift(v: AdaptedDrift, model: ModelSpec, grid: TimeGrid, n_paths: int,
                     options: RunOptions) -> AdaptedDrift:
    """Drift values solved on an independent seed: a pair that must fail the residual"""
    other = options.with_changes(seed=(options.seed + 1) % 2 ** 64)
    B = sample_brownian(grid, other.rng, model.d, n_paths, other.workers, other.chunk_size)
    state, u = monge_ampere_solve(v, model, grid, B, other)
    return AdaptedDrift.from_array(realize_drift(u, B, grid, state, other.clip_u), name="mismatched")


def monge_ampere_residual(model: ModelSpec, v: AdaptedDrift, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                          options: Optional[RunOptions] = None,
                          basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """
    (i) E sum |P (v-dot + Ê[u-dot | F(X^U)])|^2 dt = 0,
    (ii) E[l o X^U zeta_1] = 1,
    (iii) entropy formula = 1/2 E sum |P v-dot|^2 dt = E[log l o X^U].
    """
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("monge-ampere", options.seed)
    data = innovation_batch(model, u, grid, n_paths, options, basis)
    mask = keep_mask(data.batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        data = data.subset(mask)
    batch = data.batch

    vdot = realize_drift(v, batch.B, grid, batch.X)
    mismatch = batch.P.apply(vdot + data.conditional)
    residual = np.sum(mismatch * mismatch, axis=(1, 2)) * grid.dt
    report.add(ZeroMeanCheck("Monge-Ampere residual energy", options.atol).evaluate(residual))

    log_l = log_density(batch, -vdot)
    log_zeta = np.log(zeta_from_innovation(data)[:, -1])
    product = np.exp(log_l + log_zeta)
    report.add(ZeroMeanCheck("l o X^U zeta_1 - 1", options.atol).evaluate(product - 1.0))
    report.diagnostics["l_zeta_std"] = float(np.std(product))

    formula = _formula_samples(data)
    projected_v = batch.P.apply(vdot)
    v_entropy = 0.5 * np.sum(projected_v * projected_v, axis=(1, 2)) * grid.dt
    report.add(ZeroMeanCheck("entropy formula - v energy", options.atol).evaluate(formula - v_entropy))
    report.add(ZeroMeanCheck("direct entropy - formula", options.atol).evaluate(log_l - formula))
    report.diagnostics["entropy_formula"] = estimate(formula).to_dict()
    report.diagnostics["entropy_v"] = estimate(v_entropy).to_dict()
    report.diagnostics["entropy_direct"] = estimate(log_l).to_dict()
    return report


def verify_monge_ampere(model: ModelSpec, v: AdaptedDrift, grid: TimeGrid, n_paths: int,
                        options: Optional[RunOptions] = None, basis: Optional[FeatureBasis] = None,
                        negative_control: bool = False) -> VerificationReport:
    """Solve for u from v (or take a mismatched u) and check the residuals"""
    options = options or RunOptions()
    u = mismatched_drift(v, model, grid, n_paths, options) if negative_control else monge_ampere_drift(v)
    report = monge_ampere_residual(model, v, u, grid, n_paths, options, basis)
    report.diagnostics["negative_control"] = negative_control
    return report
