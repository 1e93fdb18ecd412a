"""
Least-Squares Conditional Expectations
======================================

Ê[Y | F_k(X)] by cross-sectional regression of per-path targets on features
of the state history X_{t <= t_k} (least-squares Monte Carlo).

FeatureBasis follows the scikit-learn transformer protocol: ``raw`` gathers
the lagged state values at step k and ``transform`` expands them into the
feature matrix (constant column first).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import PolynomialFeatures

from .core_paths import StatePath
from .errors import InvalidArgumentError, NumericalError

logger = logging.getLogger(__name__)

BASIS_KINDS = ("polynomial", "fourier")
DEFAULT_RIDGE_SCALE = 1e-8
MIN_PATHS_PER_FEATURE = 10
SINGULAR_CONDITION = 1e14
ILL_CONDITIONED = 1e12


def default_lags(n_steps: int, count: int = 4) -> Tuple[int, ...]:
    """Step offsets 0, s, 2s, ... with s = max(1, N // 16)"""
    spacing = max(1, n_steps // 16)
    return tuple(i * spacing for i in range(count))


class FeatureBasis(BaseEstimator, TransformerMixin):
    """
    Feature map phi(X_{<=k}): polynomial or Fourier terms in the state at
    the lag steps k - lag (clamped at 0).
    """

    def __init__(self, kind: str = "polynomial", degree: int = 2, lags: Optional[Sequence[int]] = None):
        self.kind = kind
        self.degree = degree
        self.lags = lags

    def _validate(self):
        if self.kind not in BASIS_KINDS:
            raise InvalidArgumentError(f"basis kind must be one of {BASIS_KINDS}, got '{self.kind}'")
        if int(self.degree) < 0:
            raise InvalidArgumentError("basis degree must be non-negative")
        if self.lags is not None and (len(self.lags) == 0 or min(self.lags) < 0):
            raise InvalidArgumentError("lags must be a non-empty list of non-negative offsets")

    def lag_offsets(self, n_steps: int) -> Tuple[int, ...]:
        return tuple(int(l) for l in self.lags) if self.lags is not None else default_lags(n_steps)

    def lag_steps(self, k: int, n_steps: int) -> List[int]:
        return [max(0, k - lag) for lag in self.lag_offsets(n_steps)]

    def n_raw(self, n: int, n_steps: int) -> int:
        return n * len(self.lag_offsets(n_steps))

    def n_features(self, n: int, n_steps: int) -> int:
        raw = self.n_raw(n, n_steps)
        if self.kind == "fourier":
            return 1 + 2 * int(self.degree) * raw
        return int(PolynomialFeatures(int(self.degree)).fit(np.zeros((1, raw))).n_output_features_)

    def raw(self, X: StatePath, k: int) -> np.ndarray:
        """Lagged state values, shape (M, n * n_lags); reads X only up to step k"""
        if not 0 <= k <= X.n_steps:
            raise InvalidArgumentError(f"step {k} outside [0, {X.n_steps}]")
        steps = self.lag_steps(k, X.n_steps)
        return X.values[:, steps, :].reshape(X.n_paths, -1)

    def fit(self, Z: np.ndarray, y=None):
        self._validate()
        self.n_raw_ = np.asarray(Z).shape[1]
        if self.kind == "polynomial":
            self.poly_ = PolynomialFeatures(int(self.degree), include_bias=True).fit(Z)
        return self

    def transform(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[1] != self.n_raw_:
            raise InvalidArgumentError(f"expected {self.n_raw_} raw features, got {Z.shape[1]}")
        if self.kind == "polynomial":
            return self.poly_.transform(Z)
        freqs = np.arange(1, int(self.degree) + 1)
        angles = Z[:, :, None] * freqs
        return np.hstack([np.ones((Z.shape[0], 1)), np.sin(angles).reshape(Z.shape[0], -1),
                          np.cos(angles).reshape(Z.shape[0], -1)])

    def features(self, X: StatePath, k: int) -> np.ndarray:
        return self.fit_transform(self.raw(X, k))

    def describe(self) -> dict:
        return {"kind": self.kind, "degree": int(self.degree),
                "lags": None if self.lags is None else [int(l) for l in self.lags]}


@dataclass(frozen=True)
class LeastSquaresSolution:
    """Ridge solution with an unpenalised intercept"""

    intercept: np.ndarray
    coef: np.ndarray
    residual_variance: np.ndarray
    target_variance: np.ndarray
    condition_number: float
    ridge: float
    active: np.ndarray

    def predict(self, design: np.ndarray) -> np.ndarray:
        return self.intercept + design @ self.coef


def least_squares(design: np.ndarray, targets: np.ndarray, ridge: Optional[float] = None) -> LeastSquaresSolution:
    """
    Minimise mean (Y - c - beta . phi)^2 + ridge |beta|^2 over (c, beta).

    Columns are centred so the intercept is never penalised and the mean
    prediction equals the mean target. Constant columns get coefficient 0.
    ``ridge=None`` uses 1e-8 * trace(G) / p on the centred Gram matrix G.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    if design.ndim != 2 or design.shape[0] != targets.shape[0]:
        raise InvalidArgumentError(f"design {design.shape} does not match targets {targets.shape}")
    if ridge is not None and ridge < 0:
        raise InvalidArgumentError("ridge must be non-negative")
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(targets))):
        raise NumericalError("design or targets contain non-finite values")

    n_rows, p = design.shape
    x_mean = design.mean(axis=0)
    y_mean = targets.mean(axis=0)
    xc = design - x_mean
    yc = targets - y_mean
    spread = np.sqrt(np.mean(xc * xc, axis=0))
    active = spread > 1e-12 * (1.0 + np.abs(x_mean))
    coef = np.zeros((p, targets.shape[1]))
    condition = 1.0
    used_ridge = 0.0 if ridge is None else float(ridge)

    if np.any(active):
        xa = xc[:, active]
        gram = xa.T @ xa / n_rows
        rhs = xa.T @ yc / n_rows
        if ridge is None:
            used_ridge = DEFAULT_RIDGE_SCALE * float(np.trace(gram)) / gram.shape[0]
        system = gram + used_ridge * np.eye(gram.shape[0])
        condition = float(np.linalg.cond(system))
        if used_ridge == 0.0 and (not np.isfinite(condition) or condition > SINGULAR_CONDITION):
            raise NumericalError(f"rank-deficient design (condition number {condition:.3g}) with ridge = 0")
        try:
            coef[active] = scipy.linalg.solve(system, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise NumericalError(f"normal equations could not be solved: {e}") from e
        if condition > ILL_CONDITIONED:
            logger.warning(f"ill-conditioned regression (condition number {condition:.3g})")

    intercept = y_mean - x_mean @ coef
    resid = yc - xc @ coef
    solution = LeastSquaresSolution(
        intercept=intercept[0] if squeeze else intercept,
        coef=coef[:, 0] if squeeze else coef,
        residual_variance=np.mean(resid * resid, axis=0)[0] if squeeze else np.mean(resid * resid, axis=0),
        target_variance=np.mean(yc * yc, axis=0)[0] if squeeze else np.mean(yc * yc, axis=0),
        condition_number=condition,
        ridge=used_ridge,
        active=active,
    )
    return solution


@dataclass(frozen=True)
class RegressionFit:
    """Fitted estimator of E[Y | F_k(X)] at one step"""

    basis: FeatureBasis
    step: int
    n_steps: int
    n_state: int
    solution: LeastSquaresSolution
    holdout_residual_variance: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        """Weights on the full feature vector; the constant column carries the intercept"""
        coef = np.array(self.solution.coef, dtype=float)
        coef[0] = coef[0] + self.solution.intercept
        return coef

    @property
    def residual_variance(self):
        return self.solution.residual_variance

    @property
    def condition_number(self) -> float:
        return self.solution.condition_number


def check_sample_size(basis: FeatureBasis, n_paths: int, n: int, n_steps: int):
    basis._validate()
    p = basis.n_features(n, n_steps)
    if n_paths < MIN_PATHS_PER_FEATURE * p:
        raise InvalidArgumentError(
            f"{n_paths} paths are too few for {p} features (need at least {MIN_PATHS_PER_FEATURE * p})"
        )


def fit_conditional(targets: np.ndarray, paths: StatePath, basis: FeatureBasis, k: int,
                    ridge: Optional[float] = None, holdout: bool = False) -> RegressionFit:
    """Regress per-path targets (M,) or (M, q) on phi(X_{<=k})"""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] != paths.n_paths:
        raise InvalidArgumentError(f"{targets.shape[0]} targets for {paths.n_paths} paths")
    check_sample_size(basis, paths.n_paths, paths.dim, paths.n_steps)
    design = basis.features(paths, k)
    solution = least_squares(design, targets, ridge)

    holdout_var = None
    if holdout:
        half = paths.n_paths // 2
        train = least_squares(design[:half], targets[:half], ridge)
        resid = targets[half:] - train.predict(design[half:])
        holdout_var = np.var(resid, axis=0)

    diagnostics = {
        "step": k,
        "residual_variance": np.atleast_1d(solution.residual_variance).tolist(),
        "target_variance": np.atleast_1d(solution.target_variance).tolist(),
        "condition_number": solution.condition_number,
    }
    if holdout_var is not None:
        diagnostics["holdout_residual_variance"] = np.atleast_1d(holdout_var).tolist()
    logger.debug(f"step {k} regression: {diagnostics}")
    return RegressionFit(basis, k, paths.n_steps, paths.dim, solution, holdout_var, diagnostics)


def predict(fit: RegressionFit, path: StatePath, k: int) -> np.ndarray:
    """beta . phi(X_{<=k}) for every path in the batch"""
    if k != fit.step:
        raise InvalidArgumentError(f"fit was made at step {fit.step}, not {k}")
    if path.dim != fit.n_state or path.n_steps != fit.n_steps:
        raise InvalidArgumentError("path batch does not match the fitted basis")
    design = fit.basis.features(path, k)
    return fit.solution.predict(design)


def conditional_path(targets: np.ndarray, paths: StatePath, basis: FeatureBasis,
                     ridge: Optional[float] = None, holdout: bool = False) -> Tuple[np.ndarray, List[RegressionFit]]:
    """
    Ê[Y_k | F_k(X)] for every step of targets shaped (M, N, q); returns the
    (M, N, q) predictions and the per-step fits.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 3 or targets.shape[:2] != (paths.n_paths, paths.n_steps):
        raise InvalidArgumentError(f"targets of shape {targets.shape} do not match the path batch")
    out = np.empty(targets.shape)
    fits = []
    for k in range(paths.n_steps):
        fit = fit_conditional(targets[:, k], paths, basis, k, ridge, holdout)
        out[:, k] = fit.solution.predict(basis.features(paths, k))
        fits.append(fit)
    return out, fits


def coefficient_std_errors(design: np.ndarray, solution: LeastSquaresSolution) -> np.ndarray:
    """Classical standard errors sigma^2 (G + ridge)^-1 / M of the slope coefficients"""
    design = np.asarray(design, dtype=float)
    n_rows = design.shape[0]
    se = np.zeros(design.shape[1])
    active = solution.active
    if not np.any(active):
        return se
    xa = design[:, active] - design[:, active].mean(axis=0)
    system = xa.T @ xa / n_rows + solution.ridge * np.eye(int(active.sum()))
    try:
        inverse = scipy.linalg.inv(system)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise NumericalError(f"cannot invert the Gram matrix: {e}") from e
    residual_variance = float(np.max(np.atleast_1d(solution.residual_variance)))
    se[active] = np.sqrt(np.maximum(residual_variance * np.diag(inverse) / n_rows, 0.0))
    return se
