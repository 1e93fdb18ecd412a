"""
Command-line front end.

    python -m degenerate_diffusion verify-wick --model M1 --n-steps 64 --n-paths 1000 --seed 7
    python -m degenerate_diffusion entropy --model M2 --u "0.5, 0" --n-paths 100000
    python -m degenerate_diffusion suite --out results/suite

Exit status: 0 when every statistic passes, 1 on a verification failure or a
runtime error, 2 on a configuration or argument error. Errors are printed as
a JSON document.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import SUBCOMMANDS, ExperimentConfig, Settings, load_config
from .errors import ConfigError, DiffusionError, InvalidArgumentError, VerificationFailure
from .experiments import VerificationPipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="experiment file (YAML or JSON)")
    parent.add_argument("--model", help="zoo model name or alias (M1..M5)")
    parent.add_argument("--n-steps", type=int)
    parent.add_argument("--n-paths", type=int)
    parent.add_argument("--seed", type=int)
    parent.add_argument("--rank-tol", type=float)
    parent.add_argument("--clip-u", type=float, help="energy cap R for the perturbing drift")
    parent.add_argument("--clip-levels", type=float, nargs="+", help="extra clip levels for entropy")
    parent.add_argument("--basis", "--basis-kind", dest="basis_kind", choices=["polynomial", "fourier"])
    parent.add_argument("--degree", type=int)
    parent.add_argument("--lags", type=int, nargs="+")
    parent.add_argument("--ridge", type=float)
    parent.add_argument("--holdout", action="store_true", default=None)
    parent.add_argument("--exclude-rank-jumps", action="store_true", default=None)
    parent.add_argument("--h", help="Cameron-Martin derivative, e.g. '1, 0'")
    parent.add_argument("--u", help="adapted drift in t, x1.., w1.., e.g. 'sin(w1), 0'")
    parent.add_argument("--v", help="target drift in t, x1.., e.g. '0.5*cos(x1), 0.5*sin(x1)'")
    parent.add_argument("--expected-entropy", type=float)
    parent.add_argument("--max-order", type=int)
    parent.add_argument("--n-blocks", type=int)
    parent.add_argument("--n-matrices", type=int)
    parent.add_argument("--negative-control", action="store_true", default=None)
    parent.add_argument("--dump-paths", type=int, metavar="K", help="write the first K paths to paths.csv")
    parent.add_argument("--no-escalate", dest="escalate", action="store_false", default=None)
    parent.add_argument("--suite-scale", type=float)
    parent.add_argument("--workers", type=int)
    parent.add_argument("--out", dest="output_dir", help="output directory")
    parent.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degenerate_diffusion",
        description="Monte Carlo verification of martingale representation for degenerate diffusions",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    parent = _common_flags()
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[parent])
    return parser


OVERRIDE_KEYS = (
    "model", "n_steps", "n_paths", "seed", "rank_tol", "clip_u", "clip_levels", "basis_kind", "degree", "lags",
    "ridge", "holdout", "exclude_rank_jumps", "h", "u", "v", "expected_entropy", "max_order", "n_blocks",
    "n_matrices", "negative_control", "dump_paths", "escalate", "suite_scale", "workers", "output_dir",
)


def config_from_args(args: argparse.Namespace, settings: Settings) -> ExperimentConfig:
    """Settings give the defaults, a config file replaces them, flags win"""
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = ExperimentConfig(
            seed=settings.default_seed,
            workers=settings.workers,
            chunk_size=settings.chunk_size,
            output_dir=settings.output_dir,
        )
    overrides = {key: getattr(args, key) for key in OVERRIDE_KEYS}
    if overrides["lags"] is not None:
        overrides["lags"] = list(overrides["lags"])
    if overrides["clip_levels"] is not None:
        overrides["clip_levels"] = list(overrides["clip_levels"])
    return config.with_overrides(verifier=args.command, **overrides)


def _emit(payload: dict):
    print(json.dumps(payload, indent=2))


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    logging.basicConfig(level=args.log_level or settings.log_level, format=LOG_FORMAT)

    try:
        config = config_from_args(args, settings)
    except (ConfigError, InvalidArgumentError) as e:
        _emit(e.to_dict())
        return EXIT_CONFIG
    except TypeError as e:
        _emit(ConfigError(str(e), "arguments").to_dict())
        return EXIT_CONFIG

    out_dir = Path(config.output_dir)
    pipeline = VerificationPipeline()
    try:
        if config.verifier == "suite":
            report = pipeline.run_suite(config, out_dir)
        else:
            report = pipeline.run(config)
    except (ConfigError, InvalidArgumentError) as e:
        _emit(e.to_dict())
        return EXIT_CONFIG
    except DiffusionError as e:
        logger.error(f"{config.verifier} aborted: {e}")
        _emit(e.to_dict())
        return EXIT_FAILED

    report_path = report.write(out_dir)
    try:
        pipeline.gate(report)
    except VerificationFailure as e:
        _emit({**e.to_dict(), "report": str(report_path)})
        return EXIT_FAILED
    _emit({"status": "passed", "report": str(report_path), **report.summary()})
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
