"""
Verification Reports
====================

Statistical checks and the report they roll up into. Each check turns
per-path samples (or a scalar) into a Statistic carrying the Monte Carlo
estimate, the threshold it was held to and whether it passed; a report
passes only when every statistic does.

Reports are written as report.json (full document) and stats.csv (one row
per statistic, floats with 17 significant digits).
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .core_paths import MCEstimate, estimate

logger = logging.getLogger(__name__)

N_SIGMA = 3.0
DEFAULT_ATOL = 1e-9
STATS_COLUMNS = ["label", "mean", "std_error", "n", "threshold", "pass"]
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class Statistic:
    """One tested quantity"""

    label: str
    estimate: MCEstimate
    threshold: float
    passed: bool
    kind: str
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "kind": self.kind,
            "mean": self.estimate.mean,
            "std_error": self.estimate.std_error,
            "n": self.estimate.n_samples,
            "threshold": self.threshold,
            "passed": self.passed,
            "message": self.message,
        }


class Check:
    """Base class for statistical checks"""

    kind = "check"

    def __init__(self, label: str, atol: float = DEFAULT_ATOL):
        self.label = label
        self.atol = atol

    def evaluate(self, *args, **kwargs) -> Statistic:
        raise NotImplementedError


class ZeroMeanCheck(Check):
    """|mean| <= 3 SE + atol for per-path samples of a zero-mean statistic"""

    kind = "zero-mean"

    def evaluate(self, samples: np.ndarray) -> Statistic:
        est = estimate(samples)
        threshold = N_SIGMA * est.std_error + self.atol
        passed = bool(abs(est.mean) <= threshold)
        return Statistic(self.label, est, threshold, passed, self.kind,
                         f"|{est.mean:.4g}| vs {threshold:.4g}")


class UpperBoundCheck(Check):
    """mean <= bound + 3 SE + atol (one-sided)"""

    kind = "upper-bound"

    def __init__(self, label: str, bound: float = 0.0, atol: float = DEFAULT_ATOL):
        super().__init__(label, atol)
        self.bound = bound

    def evaluate(self, samples: np.ndarray) -> Statistic:
        est = estimate(samples)
        threshold = self.bound + N_SIGMA * est.std_error + self.atol
        passed = bool(est.mean <= threshold)
        return Statistic(self.label, est, threshold, passed, self.kind,
                         f"{est.mean:.4g} <= {threshold:.4g}")


class LowerBoundCheck(Check):
    """mean >= bound - 3 SE - atol (one-sided)"""

    kind = "lower-bound"

    def __init__(self, label: str, bound: float = 0.0, atol: float = DEFAULT_ATOL):
        super().__init__(label, atol)
        self.bound = bound

    def evaluate(self, samples: np.ndarray) -> Statistic:
        est = estimate(samples)
        threshold = self.bound - N_SIGMA * est.std_error - self.atol
        passed = bool(est.mean >= threshold)
        return Statistic(self.label, est, threshold, passed, self.kind,
                         f"{est.mean:.4g} >= {threshold:.4g}")


class ToleranceCheck(Check):
    """A deterministic quantity (max error, relative error) at most a fixed tolerance"""

    kind = "tolerance"

    def __init__(self, label: str, tolerance: float):
        super().__init__(label, 0.0)
        self.tolerance = tolerance

    def evaluate(self, value: float, n_samples: int = 1) -> Statistic:
        value = float(value)
        passed = bool(np.isfinite(value) and value <= self.tolerance)
        return Statistic(self.label, MCEstimate(value, 0.0, int(n_samples)), self.tolerance, passed,
                         self.kind, f"{value:.4g} <= {self.tolerance:.4g}")


@dataclass
class VerificationReport:
    """Outcome of one verifier run"""

    name: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    statistics: List[Statistic] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, Any] = field(default_factory=dict)
    created_at: str = field(default_factory=lambda: datetime.now().isoformat())

    def add(self, statistic: Statistic) -> Statistic:
        self.statistics.append(statistic)
        level = logging.DEBUG if statistic.passed else logging.WARNING
        outcome = "passed" if statistic.passed else "FAILED"
        logger.log(level, f"{self.name} / {statistic.label}: {outcome} ({statistic.message})")
        return statistic

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.statistics)

    @property
    def failed_statistics(self) -> List[Statistic]:
        return [s for s in self.statistics if not s.passed]

    def summary(self) -> Dict[str, Any]:
        total = len(self.statistics)
        failed = len(self.failed_statistics)
        return {
            "total": total,
            "passed": total - failed,
            "failed": failed,
            "status": "passed" if failed == 0 else "failed",
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "status": self.summary()["status"],
            "summary": self.summary(),
            "statistics": [s.to_dict() for s in self.statistics],
            "config": self.config,
            "diagnostics": _jsonable(self.diagnostics),
            "timestamp": self.created_at,
        }

    def stats_frame(self) -> pd.DataFrame:
        rows = [
            {
                "label": s.label,
                "mean": s.estimate.mean,
                "std_error": s.estimate.std_error,
                "n": s.estimate.n_samples,
                "threshold": s.threshold,
                "pass": s.passed,
            }
            for s in self.statistics
        ]
        return pd.DataFrame(rows, columns=STATS_COLUMNS)

    def write(self, out_dir: Path, stats_csv: bool = True) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "report.json"
        with open(report_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        if stats_csv:
            self.stats_frame().to_csv(out_dir / "stats.csv", index=False, float_format=FLOAT_FORMAT)
        for name, artifact in self.artifacts.items():
            if isinstance(artifact, pd.DataFrame):
                artifact.to_csv(out_dir / name, index=False, float_format=FLOAT_FORMAT)
            else:
                with open(out_dir / name, "w") as f:
                    json.dump(_jsonable(artifact), f, indent=2)
        logger.info(f"wrote {report_path} ({self.summary()['status']})")
        return report_path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    if isinstance(value, MCEstimate):
        return value.to_dict()
    return value


def load_report(path: Path) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)
