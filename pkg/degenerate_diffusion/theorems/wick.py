"""
Conditional Wick exponentials and the commutation of conditional
expectation with stochastic integration, tested in weak form against the
fixed list of test functionals.
"""

import logging
from typing import Optional

import numpy as np

from ..condexp import FeatureBasis, conditional_path
from ..core_paths import AdaptedDrift, CameronMartinFn, TimeGrid, estimate
from ..ito import ito_integral, projected_wick, wick_exponential
from ..models import ModelSpec
from ..reports import ToleranceCheck, VerificationReport, ZeroMeanCheck
from ..simulate import realize_drift
from .common import TEST_FUNCTIONALS, RunOptions, default_basis, keep_mask, simulate_batch

logger = logging.getLogger(__name__)

PATHWISE_TOLERANCE = 1e-12


def verify_wick_conditional(model: ModelSpec, h: CameronMartinFn, grid: TimeGrid, n_paths: int,
                            options: Optional[RunOptions] = None) -> VerificationReport:
    """E[rho(delta h) g(X)] = E[rho(delta_m h) g(X)] on common paths"""
    options = options or RunOptions()
    report = VerificationReport("verify-wick", options.seed)
    batch = simulate_batch(model, grid, n_paths, options)
    mask = keep_mask(batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        batch = batch.subset(mask)

    full = wick_exponential(h, batch.B)
    projected = projected_wick(h, batch.P, batch.B)
    gap = full - projected
    for label, g in TEST_FUNCTIONALS.items():
        report.add(ZeroMeanCheck(f"wick gap [{label}]", options.atol).evaluate(gap * g(batch.X)))

    integrand = batch.P.apply(np.broadcast_to(h.hdot, batch.dW.shape))
    compensator = 0.5 * np.sum(integrand * integrand, axis=(1, 2)) * grid.dt
    exponent = ito_integral(integrand, batch.B)
    log_gap = np.abs(np.log(projected) + compensator - exponent) / (1.0 + np.abs(exponent))
    report.add(ToleranceCheck("log projected wick consistency", PATHWISE_TOLERANCE).evaluate(
        float(np.max(log_gap)), batch.n_paths))

    if np.all(batch.P.ranks == model.d):
        pathwise = float(np.max(np.abs(gap) / full))
        report.add(ToleranceCheck("full-rank pathwise identity", PATHWISE_TOLERANCE).evaluate(
            pathwise, batch.n_paths))
    report.diagnostics["mean_wick"] = estimate(full).to_dict()
    report.diagnostics["mean_projected_wick"] = estimate(projected).to_dict()
    return report


def verify_commutation(model: ModelSpec, u: AdaptedDrift, grid: TimeGrid, n_paths: int,
                       options: Optional[RunOptions] = None,
                       basis: Optional[FeatureBasis] = None) -> VerificationReport:
    """
    E[(sum u-dot . dB) g(X)] = E[(sum Ê[P u-dot | F_k(X)] . dm) g(X)]: the
    conditional expectation of a driver integral is the integral of the
    projected conditional drift against dm.
    """
    options = options or RunOptions()
    basis = basis or default_basis(model)
    report = VerificationReport("verify-commutation", options.seed)
    batch = simulate_batch(model, grid, n_paths, options)
    mask = keep_mask(batch.P, enabled=options.exclude_rank_jumps)
    if mask is not None:
        batch = batch.subset(mask)

    udot = realize_drift(u, batch.B, grid, batch.X if u.uses_state else None, options.clip_u)
    lhs = ito_integral(udot, batch.B)
    conditional, fits = conditional_path(batch.P.apply(udot), batch.X, basis, options.ridge, options.holdout)
    projected = batch.P.apply(conditional)
    rhs = np.einsum("mkd,mkd->m", projected, batch.dW)

    for label, g in TEST_FUNCTIONALS.items():
        report.add(ZeroMeanCheck(f"commutation gap [{label}]", options.atol).evaluate((lhs - rhs) * g(batch.X)))

    report.diagnostics["rhs_energy"] = estimate(np.sum(projected * projected, axis=(1, 2)) * grid.dt).to_dict()
    report.diagnostics["max_condition_number"] = max(f.condition_number for f in fits)
    if options.holdout or not report.passed:
        report.diagnostics["regressions"] = [f.diagnostics for f in fits]
    return report
