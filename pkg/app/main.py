"""
Command-line application for the heavy-tail eigenvalue lab.
Handles argument parsing, logging setup and the global error handler that
maps failures to exit codes and error records.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger
from pydantic import ValidationError

from app.api.commands import cmd_compare, cmd_limits, cmd_ldcheck, cmd_simulate
from app.config import settings
from app.models.errors import ConfigValidationError, LabError
from app.models.schemas import CompareRequest, LDCheckRequest, LimitsRequest
from app.repositories.result_repository import result_repository

U64_MAX = 2**64 - 1


# Configure logging
def setup_logging(quiet: bool = False):
    """Setup application logging configuration."""
    # Remove default logger
    logger.remove()

    # Add console logger
    logger.add(
        sys.stderr,
        level="WARNING" if quiet else settings.log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
    )

    # Add file logger
    if settings.log_file:
        os.makedirs(os.path.dirname(settings.log_file) or ".", exist_ok=True)
        logger.add(
            settings.log_file,
            level=settings.log_level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            rotation="10 MB",
            retention="30 days",
        )


def _u64(text: str) -> int:
    value = int(text, 10)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64), got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text, 10)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heavytail-lab",
        description="Monte Carlo lab for the largest eigenvalues of heavy-tailed sample covariance matrices",
    )
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="run an experiment and write results.csv")
    simulate.add_argument("--config", type=Path, required=True, help="experiment config JSON")
    simulate.add_argument("--seed", type=_u64, help="override master_seed")
    simulate.add_argument("--threads", type=_positive_int, help="worker count (speed only)")

    compare = sub.add_parser("compare", help="compare results.csv with the limit laws")
    compare.add_argument("--results", type=Path, required=True, help="results.csv to read")
    compare.add_argument("--config", type=Path, required=True, help="law and grid JSON")

    ldcheck = sub.add_parser("ldcheck", help="large-deviation ratio over a grid")
    ldcheck.add_argument("--config", type=Path, required=True, help="grid JSON")
    ldcheck.add_argument("--seed", type=_u64, help="override master_seed")

    limits = sub.add_parser("limits", help="tabulate limit-law quantities")
    limits.add_argument("--config", type=Path, required=True, help="law and grid JSON")

    for command in (simulate, compare, ldcheck, limits):
        command.add_argument("--out", type=Path, required=True, help="output directory")
        command.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, seed=args.seed, threads=args.threads)
    if args.command == "compare":
        request = result_repository.load_model(args.config, CompareRequest)
        return cmd_compare(args.results, request, args.out)
    if args.command == "ldcheck":
        request = result_repository.load_model(args.config, LDCheckRequest)
        if args.seed is not None:
            raw = request.model_dump(mode="json")
            raw["master_seed"] = args.seed
            request = result_repository.validate_model(raw, LDCheckRequest, source="--seed")
        return cmd_ldcheck(request, args.out)
    request = result_repository.load_model(args.config, LimitsRequest)
    return cmd_limits(request, args.out)


# Global exception handler
def handle_error(exc: Exception, out_dir: Optional[Path]) -> int:
    """Log, record and map an exception to its exit code."""
    if isinstance(exc, ValidationError):
        exc = ConfigValidationError(str(exc))
    if isinstance(exc, LabError):
        record = exc.to_record()
        logger.error(f"{record['error']}: {exc.detail}")
    else:
        record = {"error": type(exc).__name__, "detail": str(exc), "exit_code": 1}
        logger.exception(f"Unhandled exception: {exc}")
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            result_repository.write_error(record, out_dir)
        except Exception as e:
            logger.error(f"Could not write error record to {out_dir}: {e}")
    return int(record["exit_code"])


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(quiet=args.quiet)
    logger.info(f"heavytail-lab {settings.tool_version}: {args.command}")
    try:
        return dispatch(args)
    except Exception as e:
        return handle_error(e, args.out)
