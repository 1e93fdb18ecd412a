"""
Configuration Management
========================

Two layers:

- Settings: environment-driven defaults (LOG_LEVEL, output directory, worker
  count, default seed, chunk size), read from the project ``.env`` when it
  exists and from the process environment otherwise.
- ExperimentConfig: one experiment per file (YAML or JSON). Every default is
  explicit in ``to_dict()`` so the echoed config fully determines a run.

Usage Example:
    settings = Settings()
    config = load_config("experiments/wick_m2.yaml")
    config = config.with_overrides(n_paths=20000)
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .projection import DEFAULT_RANK_TOL
from .simulate import DEFAULT_CHUNK_SIZE
from .theorems.common import DEFAULT_SEED, DEFAULT_SWEEPS

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "simulate",
    "projector-check",
    "verify-wick",
    "verify-commutation",
    "represent",
    "chaos",
    "innovation",
    "zeta",
    "verify-innovation",
    "entropy",
    "monge-ampere",
    "martingale-problem",
    "suite",
)


class Settings:
    """Environment-backed defaults, with .env discovery from the project root"""

    def __init__(self, env_file: Optional[str] = None):
        if env_file:
            load_dotenv(env_file)
        else:
            env_path = Path(__file__).parent.parent / ".env"
            if env_path.exists():
                load_dotenv(env_path)
            else:
                load_dotenv()

    @property
    def log_level(self) -> str:
        return os.getenv("LOG_LEVEL", "INFO").upper()

    @property
    def output_dir(self) -> str:
        return os.getenv("DEGDIFF_OUTPUT_DIR", "results")

    @property
    def workers(self) -> int:
        return _int_env("DEGDIFF_WORKERS", 1)

    @property
    def default_seed(self) -> int:
        return _int_env("DEGDIFF_SEED", DEFAULT_SEED)

    @property
    def chunk_size(self) -> int:
        return _int_env("DEGDIFF_CHUNK_SIZE", DEFAULT_CHUNK_SIZE)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"environment variable {name} must be an integer, got {raw!r}", name) from e


Expression = Union[str, List[Any]]


@dataclass(frozen=True)
class ExperimentConfig:
    verifier: str = "suite"
    model: Union[str, Dict[str, Any]] = "M1"
    n_steps: int = 64
    n_paths: int = 10000
    seed: int = DEFAULT_SEED
    stream_id: int = 0
    rank_tol: float = DEFAULT_RANK_TOL
    basis_kind: Optional[str] = None
    degree: Optional[int] = None
    lags: Optional[List[int]] = None
    ridge: Optional[float] = None
    clip_u: Optional[float] = None
    clip_levels: List[float] = field(default_factory=list)
    holdout: bool = False
    exclude_rank_jumps: bool = False
    sweeps: int = DEFAULT_SWEEPS
    h: Optional[Expression] = None
    u: Optional[Expression] = None
    v: Optional[Expression] = None
    expected_entropy: Optional[float] = None
    max_order: int = 2
    n_blocks: int = 8
    n_matrices: int = 1000
    negative_control: bool = False
    dump_paths: int = 0
    escalate: bool = True
    suite_scale: float = 1.0
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    output_dir: str = "results"

    def __post_init__(self):
        if self.verifier not in SUBCOMMANDS:
            raise ConfigError(f"unknown verifier '{self.verifier}' (known: {', '.join(SUBCOMMANDS)})", "verifier")
        for name in ("n_steps", "n_paths", "max_order", "n_blocks", "n_matrices", "workers", "chunk_size", "sweeps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", name)
        if self.rank_tol <= 0:
            raise ConfigError("rank_tol must be positive", "rank_tol")
        if self.clip_u is not None and self.clip_u <= 0:
            raise ConfigError("clip_u must be positive", "clip_u")
        if self.suite_scale <= 0:
            raise ConfigError("suite_scale must be positive", "suite_scale")

    @classmethod
    def from_dict(cls, raw: Any, location: str = "") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a mapping", location or "<root>")
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, value in raw.items():
            where = f"{location}.{key}" if location else str(key)
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'", where)
            values[key] = _coerce(key, value, where)
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Replace fields whose override is not None (CLI flags over file values)"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


_INT_KEYS = {"n_steps", "n_paths", "seed", "stream_id", "degree", "max_order", "n_blocks", "n_matrices",
             "dump_paths", "workers", "chunk_size", "sweeps"}
_FLOAT_KEYS = {"rank_tol", "ridge", "clip_u", "suite_scale", "expected_entropy"}
_BOOL_KEYS = {"holdout", "exclude_rank_jumps", "negative_control", "escalate"}
_STR_KEYS = {"verifier", "basis_kind", "output_dir"}


def _coerce(key: str, value: Any, where: str) -> Any:
    if value is None:
        return None
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' must be true or false, got {value!r}", where)
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' must be an integer, got {value!r}", where)
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {value!r}", where)
        return float(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {value!r}", where)
        return value
    if key == "model":
        if not isinstance(value, (str, dict)):
            raise ConfigError("'model' must be a zoo name or a custom model mapping", where)
        return value
    if key in ("lags", "clip_levels"):
        if not isinstance(value, list):
            raise ConfigError(f"'{key}' must be a list, got {value!r}", where)
        return [_coerce("clip_u" if key == "clip_levels" else "n_steps", item, f"{where}[{i}]")
                for i, item in enumerate(value)]
    if key in ("h", "u", "v"):
        if not isinstance(value, (str, list)):
            raise ConfigError(f"'{key}' must be an expression string or a list of them", where)
        return value
    return value


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read one experiment from a YAML or JSON file"""
    path = Path(path)
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}", str(path)) from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(path)
        raise ConfigError(f"cannot parse config: {e}", where) from e
    logger.info(f"Loaded experiment config from {path}")
    return ExperimentConfig.from_dict(raw or {})
