"""
Experiment Orchestration and the Verification Gate
==================================================

Turns an ExperimentConfig into a VerificationReport: resolves the model,
grid, basis and h/u/v expressions, dispatches to the matching verifier,
applies the escalation rule and gates the outcome.

Escalation: a report with at most max(1, n // 20) failing statistics out of
n is re-run once at 4x the paths with the same seed; the re-run decides.

The ``suite`` subcommand runs the acceptance battery. Each entry is an
experiment with its own sizes (scaled by ``suite_scale``) and an expected
outcome; the negative control is expected to fail.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .condexp import FeatureBasis
from .config import ExperimentConfig
from .core_paths import AdaptedDrift, CameronMartinFn, MCEstimate, TimeGrid, make_grid
from .errors import VerificationFailure
from .models import ModelSpec, resolve_model
from .reports import Statistic, VerificationReport
from .theorems import (
    RunOptions,
    default_basis,
    entropy_inequality_check,
    verify_chaos,
    verify_commutation,
    verify_innovation_martingale,
    verify_innovation_represent,
    verify_martingale_problem,
    verify_monge_ampere,
    verify_projection_minimality,
    verify_projector_algebra,
    verify_representation,
    verify_simulation,
    verify_wick_conditional,
    verify_zeta,
)

logger = logging.getLogger(__name__)

ESCALATION_FACTOR = 4


@dataclass
class Experiment:
    """Everything a verifier needs, resolved from one config"""

    config: ExperimentConfig
    model: ModelSpec
    grid: TimeGrid
    options: RunOptions
    basis: FeatureBasis

    @property
    def h(self) -> CameronMartinFn:
        if self.config.h is None:
            return CameronMartinFn.constant(self.grid, np.ones(self.model.d))
        return CameronMartinFn.from_expression(self.config.h, self.grid, self.model.d)

    def drift(self, source, default: Optional[AdaptedDrift] = None) -> Optional[AdaptedDrift]:
        if source is None:
            return default
        return AdaptedDrift.from_expression(source, self.grid, self.model.n, self.model.d)

    @property
    def u(self) -> AdaptedDrift:
        return self.drift(self.config.u, AdaptedDrift.constant(np.full(self.model.d, 0.5)))

    @property
    def v(self) -> AdaptedDrift:
        return self.drift(self.config.v, AdaptedDrift.constant(np.full(self.model.d, 0.5)))


def build_options(config: ExperimentConfig) -> RunOptions:
    return RunOptions(
        seed=config.seed,
        stream_id=config.stream_id,
        rank_tol=config.rank_tol,
        ridge=config.ridge,
        clip_u=config.clip_u,
        holdout=config.holdout,
        exclude_rank_jumps=config.exclude_rank_jumps,
        workers=config.workers,
        chunk_size=config.chunk_size,
        sweeps=config.sweeps,
    )


def build_basis(config: ExperimentConfig, model: ModelSpec) -> FeatureBasis:
    """Model default unless the config names a kind, degree or lags"""
    default = default_basis(model)
    if config.basis_kind is None and config.degree is None and config.lags is None:
        return default
    return FeatureBasis(
        kind=config.basis_kind or default.kind,
        degree=default.degree if config.degree is None else config.degree,
        lags=config.lags,
    )


def build_experiment(config: ExperimentConfig) -> Experiment:
    grid = make_grid(config.n_steps)
    model = resolve_model(config.model, grid)
    return Experiment(config, model, grid, build_options(config), build_basis(config, model))


def _simulate(e: Experiment, n_paths: int) -> VerificationReport:
    return verify_simulation(e.model, e.grid, n_paths, e.options, e.drift(e.config.u), e.config.dump_paths)


def _projector_check(e: Experiment, n_paths: int) -> VerificationReport:
    return verify_projector_algebra(e.config.n_matrices, model=e.model, grid=e.grid, n_paths=n_paths,
                                    options=e.options)


def _represent(e: Experiment, n_paths: int) -> VerificationReport:
    report = verify_representation(e.model, e.h, e.grid, n_paths, e.options, e.basis)
    if e.model.d > e.model.n:
        minimality = verify_projection_minimality(e.model, e.grid, n_paths, e.options, e.basis)
        for statistic in minimality.statistics:
            report.add(statistic)
    return report


VERIFIERS: Dict[str, Callable[[Experiment, int], VerificationReport]] = {
    "simulate": _simulate,
    "projector-check": _projector_check,
    "verify-wick": lambda e, m: verify_wick_conditional(e.model, e.h, e.grid, m, e.options),
    "verify-commutation": lambda e, m: verify_commutation(e.model, e.u, e.grid, m, e.options, e.basis),
    "represent": _represent,
    "chaos": lambda e, m: verify_chaos(e.model, e.h, e.grid, m, e.options, e.config.max_order, e.config.n_blocks),
    "innovation": lambda e, m: verify_innovation_martingale(e.model, e.u, e.grid, m, e.options, e.basis),
    "zeta": lambda e, m: verify_zeta(e.model, e.u, e.grid, m, e.options, e.basis),
    "verify-innovation": lambda e, m: verify_innovation_represent(e.model, e.u, e.h, e.grid, m, e.options, e.basis),
    "entropy": lambda e, m: entropy_inequality_check(e.model, e.u, e.grid, m, e.options, e.basis,
                                                     e.config.clip_levels, e.config.expected_entropy),
    "monge-ampere": lambda e, m: verify_monge_ampere(e.model, e.v, e.grid, m, e.options, e.basis,
                                                     e.config.negative_control),
    "martingale-problem": lambda e, m: verify_martingale_problem(e.model, e.grid, m, e.options),
}


@dataclass(frozen=True)
class SuiteEntry:
    label: str
    overrides: Dict[str, Any]
    expect_pass: bool = True


def _entry(label: str, verifier: str, model: str, n_paths: int, n_steps: int = 64,
           expect_pass: bool = True, **extra) -> SuiteEntry:
    overrides = {"verifier": verifier, "model": model, "n_paths": n_paths, "n_steps": n_steps, **extra}
    return SuiteEntry(label, overrides, expect_pass)


SUITE: List[SuiteEntry] = [
    _entry("projector-algebra", "projector-check", "M3", 1000),
    _entry("wick-M1", "verify-wick", "M1", 100000, h="1"),
    _entry("represent-M1", "represent", "M1", 100000, h="1"),
    _entry("represent-M2", "represent", "M2", 100000, h="1, 1"),
    _entry("wick-M2-h10", "verify-wick", "M2", 100000, h="1, 0"),
    _entry("wick-M2-h11", "verify-wick", "M2", 100000, h="1, 1"),
    _entry("wick-M3-h10", "verify-wick", "M3", 100000, h="1, 0"),
    _entry("wick-M3-h11", "verify-wick", "M3", 100000, h="1, 1"),
    _entry("commutation-M2-observed", "verify-commutation", "M2", 100000, u="sin(w1), 0"),
    _entry("commutation-M2-kernel", "verify-commutation", "M2", 100000, u="0, sin(w2)"),
    _entry("chaos-M2", "chaos", "M2", 20000, n_steps=256, h="1, 0.5", ridge=0.0),
    _entry("innovation-M2-zero", "innovation", "M2", 100000, u="0, 0"),
    _entry("innovation-M2-deterministic", "innovation", "M2", 100000, u="0.5, 0"),
    _entry("innovation-M2-state", "innovation", "M2", 100000, u="0.5*x1, 0"),
    _entry("innovation-M3-constant", "innovation", "M3", 100000, u="0.5, 0"),
    _entry("zeta-M2-driver", "zeta", "M2", 100000, u="sin(w1), 0"),
    _entry("innovation-represent-M2", "verify-innovation", "M2", 100000, u="0.5, 0", h="1, 1"),
    _entry("entropy-M2-constant", "entropy", "M2", 100000, u="0.5, 0.3", expected_entropy=0.125),
    _entry("entropy-M2-kernel", "entropy", "M2", 100000, u="0, 0.5", expected_entropy=0.0),
    _entry("entropy-M2-clipped", "entropy", "M2", 100000, u="w1 + w2, 0", clip_levels=[0.25, 0.5, 1.0]),
    _entry("monge-ampere-M2", "monge-ampere", "M2", 100000, v="0.5, 0"),
    _entry("monge-ampere-M3", "monge-ampere", "M3", 100000, v="0.5*cos(x1), 0.5*sin(x1)"),
    _entry("monge-ampere-M3-mismatched", "monge-ampere", "M3", 100000, expect_pass=False,
           v="0.5*cos(x1), 0.5*sin(x1)", negative_control=True),
    _entry("martingale-problem-M4", "martingale-problem", "M4", 100000),
    _entry("martingale-problem-M5", "martingale-problem", "M5", 100000),
]


@dataclass
class VerificationPipeline:
    """
    Runs experiments, applies escalation, writes artifacts and gates the
    outcome (VerificationFailure when a report does not pass).
    """

    escalation_factor: int = ESCALATION_FACTOR
    history: List[Dict[str, Any]] = field(default_factory=list)

    def run(self, config: ExperimentConfig) -> VerificationReport:
        if config.verifier == "suite":
            return self.run_suite(config)
        experiment = build_experiment(config)
        verifier = VERIFIERS[config.verifier]
        logger.info(f"Running {config.verifier} on {experiment.model.name} "
                    f"(N={config.n_steps}, M={config.n_paths}, seed={config.seed})")
        report = verifier(experiment, config.n_paths)

        if not report.passed and config.escalate and self._escalates(report):
            n_paths = config.n_paths * self.escalation_factor
            logger.warning(f"{config.verifier}: {len(report.failed_statistics)} of {len(report.statistics)} "
                           f"statistics failed, re-running at {n_paths} paths")
            report = verifier(experiment, n_paths)
            report.diagnostics["escalated_to_paths"] = n_paths

        report.config = config.to_dict()
        report.diagnostics["model"] = experiment.model.to_dict()
        report.diagnostics["basis"] = experiment.basis.describe()
        summary = report.summary()
        logger.info(f"{config.verifier}: {summary['passed']}/{summary['total']} statistics passed")
        self.history.append({"verifier": config.verifier, **summary})
        return report

    @staticmethod
    def _escalates(report: VerificationReport) -> bool:
        total = len(report.statistics)
        return len(report.failed_statistics) <= max(1, total // 20)

    def run_suite(self, config: ExperimentConfig, out_dir: Optional[Path] = None) -> VerificationReport:
        """
        Run the acceptance battery; one statistic per entry, passing when the
        entry's outcome matches its expectation. Entry reports are written
        under out_dir/<label> when out_dir is given.
        """
        suite = VerificationReport("suite", config.seed, config=config.to_dict())
        for entry in SUITE:
            entry_config, report = self.run_entry(config, entry)
            if out_dir is not None:
                report.write(Path(out_dir) / entry.label)
            matched = report.passed == entry.expect_pass
            summary = report.summary()
            suite.add(Statistic(
                label=entry.label,
                estimate=MCEstimate(float(summary["failed"]), 0.0, entry_config.n_paths),
                threshold=0.0,
                passed=matched,
                kind="suite",
                message=f"{summary['status']} (expected {'pass' if entry.expect_pass else 'fail'})",
            ))
        return suite

    def run_entry(self, config: ExperimentConfig, entry: SuiteEntry) -> Tuple[ExperimentConfig, VerificationReport]:
        overrides = dict(entry.overrides)
        overrides["n_paths"] = max(1, int(round(overrides["n_paths"] * config.suite_scale)))
        entry_config = ExperimentConfig.from_dict({
            **{k: v for k, v in config.to_dict().items() if k in ("seed", "rank_tol", "workers", "chunk_size",
                                                                  "escalate", "output_dir")},
            **overrides,
        })
        return entry_config, self.run(entry_config)

    @staticmethod
    def gate(report: VerificationReport):
        """Raise VerificationFailure unless every statistic passed"""
        if not report.passed:
            failed = ", ".join(s.label for s in report.failed_statistics)
            raise VerificationFailure(f"{report.name} failed: {failed}", report.to_dict())
        return report
