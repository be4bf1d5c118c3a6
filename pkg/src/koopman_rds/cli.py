import argparse
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from koopman_rds import __version__
from koopman_rds.config import get_settings
from koopman_rds.domain.enums import EXPERIMENT_ORDER
from koopman_rds.errors import KoopmanError, is_usage_error
from koopman_rds.services.experiments import (
    get_experiment,
    oracle_spectrum,
    resolve_config,
    run_experiment,
)
from koopman_rds.services.io import read_config_overrides

EXIT_PASSED = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-rds",
        description="Stochastic Koopman spectra of random dynamical systems from data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides KOOPMAN_RDS_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment and write its artifacts")
    run.add_argument("experiment", help="Experiment name, see `koopman-rds list`")
    run.add_argument(
        "--config",
        type=Path,
        default=None,
        help="JSON overrides merged over the default config, or a previous run's metadata.json",
    )
    run.add_argument("--seed", type=int, default=None, help="Root seed of every random stream")
    run.add_argument("--out", type=Path, default=None, help="Run directory")
    run.add_argument("--workers", type=int, default=None, help="Threads for ensemble assembly")

    sub.add_parser("list", help="List the registered experiments")

    oracle = sub.add_parser("oracle", help="Print the reference spectrum of an experiment")
    oracle.add_argument("experiment")
    oracle.add_argument("--config", type=Path, default=None)
    return parser


def _config(args: argparse.Namespace):
    overrides = read_config_overrides(args.config) if args.config else None
    out = getattr(args, "out", None)
    return resolve_config(
        args.experiment,
        overrides=overrides,
        seed=getattr(args, "seed", None),
        output_dir=None if out is None else str(out),
    )


def _run(args: argparse.Namespace) -> int:
    config = _config(args)
    report = run_experiment(config, max_workers=args.workers)
    for check in report.checks:
        status = "ok  " if check.passed else "FAIL"
        print(f"{status} {check.name}: {check.value:.6g} (tolerance {check.tolerance:.6g})")
    print(f"{config.experiment}: {'passed' if report.passed else 'failed'}")
    return EXIT_PASSED if report.passed else EXIT_TOLERANCE


def _list() -> int:
    for name in EXPERIMENT_ORDER:
        print(f"{name:<24}{get_experiment(name).summary}")
    return EXIT_PASSED


def _oracle(args: argparse.Namespace) -> int:
    spectrum = oracle_spectrum(_config(args))
    print(json.dumps({"experiment": args.experiment, **spectrum.to_dict()}, indent=2))
    return EXIT_PASSED


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_dotenv()
    level = (args.log_level or get_settings().LOG_LEVEL).upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s")

    try:
        match args.command:
            case "run":
                return _run(args)
            case "list":
                return _list()
            case "oracle":
                return _oracle(args)
    except ValidationError as e:
        logging.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except KoopmanError as e:
        logging.error(str(e))
        return EXIT_USAGE if is_usage_error(e) else EXIT_NUMERICAL
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
