"""
Path-Dependent Coefficient Models
=================================

ModelSpec bundles the coefficients sigma(t, X) and b(t, X) of

    dX_t = b(t, X) dt + sigma(t, X) dB_t,  X_0 = x0

together with their declared path-space Lipschitz constant. Callbacks are
vectorised over paths: ``sigma(k, hist)`` receives the state history
``hist`` of shape (M, k+1, n) and returns (M, n, d); ``b`` returns (M, n).

The built-in zoo:

- M1_scalar_bm: n = d = 1, sigma = 1, b = 0 (Wiener measure)
- M2_rank_one: n = 1, d = 2, sigma = [1, 0], b = 0
- M3_rotating_frame: n = 1, d = 2, sigma = [cos X_t, sin X_t], b = 0
- M4_integrator: n = d = 2, sigma = diag(1, 0), b = (0, X^1_t)
- M5_path_dependent: n = 1, d = 2, sigma = [1 + sin(X_t)/2, 0], b = -X_t/2
- M5_running_max: as M5 with sin applied to max_{s<=t} X_s
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .core_paths import TimeGrid
from .errors import InvalidArgumentError, ModelError
from .expressions import compile_vector, state_values, variable_names

logger = logging.getLogger(__name__)

LIPSCHITZ_SLACK = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of a path-dependent diffusion"""

    name: str
    n: int
    d: int
    x0: np.ndarray
    sigma: Callable[[int, np.ndarray], np.ndarray]
    b: Callable[[int, np.ndarray], np.ndarray]
    lipschitz_K: float
    grid: Optional[TimeGrid] = None
    description: str = ""

    def eval_sigma(self, k: int, hist: np.ndarray) -> np.ndarray:
        n_paths = hist.shape[0]
        out = np.broadcast_to(np.asarray(self.sigma(k, hist), dtype=float), (n_paths, self.n, self.d))
        if not np.all(np.isfinite(out)):
            raise ModelError(f"{self.name}: sigma is not finite at step {k}")
        return out

    def eval_b(self, k: int, hist: np.ndarray) -> np.ndarray:
        n_paths = hist.shape[0]
        out = np.broadcast_to(np.asarray(self.b(k, hist), dtype=float), (n_paths, self.n))
        if not np.all(np.isfinite(out)):
            raise ModelError(f"{self.name}: drift is not finite at step {k}")
        return out

    def check_grid(self, grid: TimeGrid):
        """Models whose coefficients read t are bound to the grid they were built on"""
        if self.grid is not None and self.grid.n_steps != grid.n_steps:
            raise InvalidArgumentError(
                f"model {self.name} was built on N={self.grid.n_steps} steps, cannot run on N={grid.n_steps}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n": self.n,
            "d": self.d,
            "x0": [float(v) for v in self.x0],
            "lipschitz_K": self.lipschitz_K,
        }


def _check_hist(model: ModelSpec, k: int, hist: np.ndarray) -> np.ndarray:
    hist = np.asarray(hist, dtype=float)
    if hist.ndim == 2:
        hist = hist[None]
    if hist.ndim != 3 or hist.shape[1] < k + 1 or hist.shape[2] != model.n:
        raise ModelError(f"{model.name}: history of shape {hist.shape} unusable at step {k}")
    return hist[:, : k + 1]


def eval_a(model: ModelSpec, k: int, hist: np.ndarray) -> np.ndarray:
    """Diffusion matrix a = sigma sigma^T, shape (M, n, n)"""
    hist = _check_hist(model, k, hist)
    sigma = model.eval_sigma(k, hist)
    return np.einsum("mid,mjd->mij", sigma, sigma)


@dataclass(frozen=True)
class TestFunction:
    """Smooth f: R^n -> R with gradient and hessian, vectorised over rows"""

    __test__ = False

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    # E[f(x + D)] for D ~ Normal(mean, diag(var))
    gaussian_mean: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def coordinate_function(i: int, n: int) -> TestFunction:
    def grad(x):
        g = np.zeros_like(x)
        g[:, i] = 1.0
        return g

    return TestFunction(
        name=f"x{i + 1}",
        f=lambda x: x[:, i],
        grad=grad,
        hess=lambda x: np.zeros((x.shape[0], n, n)),
        gaussian_mean=lambda x, mean, var: x[:, i] + mean[:, i],
    )


def square_function(i: int, n: int) -> TestFunction:
    def grad(x):
        g = np.zeros_like(x)
        g[:, i] = 2.0 * x[:, i]
        return g

    def hess(x):
        h = np.zeros((x.shape[0], n, n))
        h[:, i, i] = 2.0
        return h

    return TestFunction(
        name=f"x{i + 1}^2",
        f=lambda x: x[:, i] ** 2,
        grad=grad,
        hess=hess,
        gaussian_mean=lambda x, mean, var: (x[:, i] + mean[:, i]) ** 2 + var[:, i],
    )


def sine_function(i: int, n: int) -> TestFunction:
    def grad(x):
        g = np.zeros_like(x)
        g[:, i] = np.cos(x[:, i])
        return g

    def hess(x):
        h = np.zeros((x.shape[0], n, n))
        h[:, i, i] = -np.sin(x[:, i])
        return h

    return TestFunction(
        name=f"sin(x{i + 1})",
        f=lambda x: np.sin(x[:, i]),
        grad=grad,
        hess=hess,
        gaussian_mean=lambda x, mean, var: np.sin(x[:, i] + mean[:, i]) * np.exp(-0.5 * var[:, i]),
    )


def standard_test_functions(n: int) -> List[TestFunction]:
    functions = []
    for i in range(n):
        functions += [coordinate_function(i, n), square_function(i, n), sine_function(i, n)]
    return functions


def apply_generator(model: ModelSpec, f: TestFunction, k: int, hist: np.ndarray) -> np.ndarray:
    """Lf = 1/2 sum a_ij d_ij f(X_k) + sum b_i d_i f(X_k), one value per path"""
    hist = _check_hist(model, k, hist)
    a = eval_a(model, k, hist)
    b = model.eval_b(k, hist)
    x = hist[:, -1]
    return 0.5 * np.einsum("mij,mij->m", a, f.hess(x)) + np.einsum("mi,mi->m", b, f.grad(x))


def euler_generator(model: ModelSpec, f: TestFunction, k: int, hist: np.ndarray, dt: float) -> np.ndarray:
    """
    One-step generator of the Euler chain, (E[f(X_{k+1}) | F_k] - f(X_k)) / dt.
    The Euler increment is Normal(b dt, a dt) given F_k; converges to Lf as dt -> 0.
    """
    hist = _check_hist(model, k, hist)
    a = eval_a(model, k, hist)
    x = hist[:, -1]
    mean = model.eval_b(k, hist) * dt
    var = np.einsum("mii->mi", a) * dt
    return (f.gaussian_mean(x, mean, var) - f.f(x)) / dt


def _constant(value: np.ndarray) -> Callable[[int, np.ndarray], np.ndarray]:
    value = np.asarray(value, dtype=float)
    return lambda k, hist: value


def _rotating_sigma(k, hist):
    x = hist[:, -1, 0]
    return np.stack([np.cos(x), np.sin(x)], axis=1)[:, None, :]


def _integrator_drift(k, hist):
    out = np.zeros((hist.shape[0], 2))
    out[:, 1] = hist[:, -1, 0]
    return out


def _path_dependent_sigma(k, hist):
    x = hist[:, -1, 0]
    out = np.zeros((hist.shape[0], 1, 2))
    out[:, 0, 0] = 1.0 + 0.5 * np.sin(x)
    return out


def _running_max_sigma(k, hist):
    x = hist[:, :, 0].max(axis=1)
    out = np.zeros((hist.shape[0], 1, 2))
    out[:, 0, 0] = 1.0 + 0.5 * np.sin(x)
    return out


def _mean_reverting_drift(k, hist):
    return -0.5 * hist[:, -1]


BUILTIN_MODELS = (
    "M1_scalar_bm",
    "M2_rank_one",
    "M3_rotating_frame",
    "M4_integrator",
    "M5_path_dependent",
    "M5_running_max",
)

MODEL_ALIASES = {name.split("_")[0]: name for name in BUILTIN_MODELS if name != "M5_running_max"}


def builtin_model(name: str) -> ModelSpec:
    """Look up a zoo model by its stable CLI identifier"""
    name = MODEL_ALIASES.get(name, name)
    if name == "M1_scalar_bm":
        return ModelSpec(name, 1, 1, np.zeros(1), _constant([[1.0]]), _constant([0.0]), 0.0,
                         description="scalar Brownian motion")
    if name == "M2_rank_one":
        return ModelSpec(name, 1, 2, np.zeros(1), _constant([[1.0, 0.0]]), _constant([0.0]), 0.0,
                         description="first driver coordinate only")
    if name == "M3_rotating_frame":
        return ModelSpec(name, 1, 2, np.zeros(1), _rotating_sigma, _constant([0.0]), 1.0,
                         description="rank-one projector rotating with X_t")
    if name == "M4_integrator":
        return ModelSpec(name, 2, 2, np.zeros(2), _constant([[1.0, 0.0], [0.0, 0.0]]), _integrator_drift, 1.0,
                         description="Brownian motion and its time integral")
    if name == "M5_path_dependent":
        return ModelSpec(name, 1, 2, np.zeros(1), _path_dependent_sigma, _mean_reverting_drift, 0.5,
                         description="state-dependent volatility with mean reversion")
    if name == "M5_running_max":
        return ModelSpec(name, 1, 2, np.zeros(1), _running_max_sigma, _mean_reverting_drift, 0.5,
                         description="volatility driven by the running maximum")
    raise InvalidArgumentError(f"unknown model '{name}' (known: {', '.join(BUILTIN_MODELS)})")


def custom_model(spec: Dict[str, Any], grid: TimeGrid) -> ModelSpec:
    """
    Build a model from expression strings::

        {"name": "my_model", "n": 1, "d": 2, "x0": [0.0],
         "sigma": [["cos(x1)", "sin(x1)"]], "b": ["0"], "lipschitz_K": 1.0}

    Expressions see t and the current state x1..xn. t is read from ``grid``,
    so the model runs only on grids with the same number of steps.
    """
    try:
        n, d = int(spec["n"]), int(spec["d"])
        sigma_rows = spec["sigma"]
        drift = spec["b"]
    except KeyError as e:
        raise InvalidArgumentError(f"custom model is missing field {e}") from e
    if n < 1 or d < 1:
        raise InvalidArgumentError("custom model dimensions must be positive")
    if len(sigma_rows) != n:
        raise InvalidArgumentError(f"sigma must have {n} rows, got {len(sigma_rows)}")

    variables = variable_names(n)
    sigma_exprs = [compile_vector(row, variables, d) for row in sigma_rows]
    drift_exprs = compile_vector(drift, variables, n)
    x0 = np.asarray(spec.get("x0", [0.0] * n), dtype=float)
    if x0.shape != (n,):
        raise InvalidArgumentError(f"x0 must have {n} entries")

    def sigma(k, hist):
        values = state_values(grid.times[k], hist[:, -1])
        shape = (hist.shape[0],)
        return np.stack([np.stack([e(shape, **values) for e in row], axis=1) for row in sigma_exprs], axis=1)

    def b(k, hist):
        values = state_values(grid.times[k], hist[:, -1])
        return np.stack([e((hist.shape[0],), **values) for e in drift_exprs], axis=1)

    return ModelSpec(
        name=str(spec.get("name", "custom")),
        n=n,
        d=d,
        x0=x0,
        sigma=sigma,
        b=b,
        lipschitz_K=float(spec.get("lipschitz_K", 0.0)),
        grid=grid,
        description="custom expression model",
    )


def resolve_model(model: Any, grid: Optional[TimeGrid] = None) -> ModelSpec:
    """Accept a ModelSpec, a zoo name or a custom-model dict"""
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, str):
        return builtin_model(model)
    if isinstance(model, dict):
        if grid is None:
            raise InvalidArgumentError("a custom model needs the time grid it will run on")
        return custom_model(model, grid)
    raise InvalidArgumentError(f"cannot interpret model {model!r}")


def check_lipschitz(model: ModelSpec, grid: TimeGrid, n_pairs: int = 100, seed: int = 0) -> float:
    """
    Sample random path pairs and check |g(t, xi) - g(t, eta)| <= K sup_{s<=t} |xi - eta|
    for g = sigma and g = b at every step. Returns the largest observed ratio
    and raises ModelError when the declared constant is exceeded.
    """
    model.check_grid(grid)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(grid.dt)
    xi = np.cumsum(rng.normal(0.0, scale, (n_pairs, grid.n_steps + 1, model.n)), axis=1) + model.x0
    eta = xi + np.cumsum(rng.normal(0.0, scale, xi.shape), axis=1)
    worst = 0.0
    for k in range(grid.n_steps + 1):
        dist = np.linalg.norm(xi[:, : k + 1] - eta[:, : k + 1], axis=2).max(axis=1)
        gaps = [
            np.linalg.norm(model.eval_sigma(k, xi[:, : k + 1]) - model.eval_sigma(k, eta[:, : k + 1]), axis=(1, 2)),
            np.linalg.norm(model.eval_b(k, xi[:, : k + 1]) - model.eval_b(k, eta[:, : k + 1]), axis=1),
        ]
        for gap in gaps:
            if np.any(gap > model.lipschitz_K * dist + LIPSCHITZ_SLACK):
                raise ModelError(
                    f"{model.name}: Lipschitz bound K={model.lipschitz_K} violated at step {k}"
                )
            positive = dist > 0
            if np.any(positive):
                worst = max(worst, float(np.max(gap[positive] / dist[positive])))
    return worst


def check_model_adaptedness(model: ModelSpec, grid: TimeGrid, k: int, n_paths: int = 16, seed: int = 0) -> bool:
    """Coefficients at step k must ignore state values after step k"""
    model.check_grid(grid)
    rng = np.random.default_rng(seed)
    hist = np.cumsum(rng.normal(0.0, np.sqrt(grid.dt), (n_paths, grid.n_steps + 1, model.n)), axis=1)
    perturbed = hist.copy()
    perturbed[:, k + 1:] += 1.0
    return bool(
        np.array_equal(model.eval_sigma(k, hist[:, : k + 1]), model.eval_sigma(k, perturbed[:, : k + 1]))
        and np.array_equal(model.eval_b(k, hist[:, : k + 1]), model.eval_b(k, perturbed[:, : k + 1]))
    )
