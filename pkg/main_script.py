#!/usr/bin/env python3
"""
Command-line entry point for geodesic distance computations
"""

import argparse
import logging
import sys
from typing import List, Optional

from pythonjsonlogger.json import JsonFormatter

from pqgeodesic.config import Config
from pqgeodesic.exceptions import ConfigError, GeodesicError
from pqgeodesic.pipeline import Pipeline

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(config: Config) -> logging.Logger:
    """Configures logging to the log file and the console, plain text or JSON lines"""
    handlers = [
        logging.FileHandler(config.log_file),
        logging.StreamHandler()
    ]
    if config.log_format == "json":
        for handler in handlers:
            handler.setFormatter(JsonFormatter(LOG_FORMAT))
    elif config.log_format != "text":
        raise ConfigError(f"Unknown log format '{config.log_format}', expected 'text' or 'json'")
    logging.basicConfig(
        level=logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )
    return logging.getLogger("pqgeodesic")


def float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Geodesic distances on triangle meshes")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--tol", type=float, help="Solver tolerance (overrides GEO_SOLVER_TOL)")
    shared.add_argument("--workers", type=int, help="Concurrent solves (overrides GEO_MAX_WORKERS)")
    shared.add_argument("--log-format", help="'text' or 'json' (overrides GEO_LOG_FORMAT)")
    shared.add_argument("--method", help="'pq' (default) or 'dfa-pl'; converge runs both unless set")

    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", parents=[shared], help="Solve one distance field")
    solve.add_argument("mesh", help="OBJ, OFF or PLY mesh")
    solve.add_argument("sources", help="JSON source specification")
    solve.add_argument("--out", help="Output file; .json, .csv, .parquet or .ply")

    converge = commands.add_parser("converge", parents=[shared], help="Convergence under 1-to-4 subdivision")
    converge.add_argument("mesh")
    converge.add_argument("--levels", type=int, help="Subdivision levels (default 3)")
    converge.add_argument("--oracle", default="self", help="'sphere', 'flat' or 'self'")
    converge.add_argument("--source", default="v:0", help="'v:index' or 'face:l0,l1,l2'")
    converge.add_argument("--csv", "--out", dest="out", help="Report file")

    noise = commands.add_parser("noise", parents=[shared], help="Robustness to Gaussian vertex noise")
    noise.add_argument("mesh")
    noise.add_argument("sources")
    noise.add_argument("--sigmas", type=float_list, default=[0.0, 0.004, 0.008],
                       help="Comma list of noise standard deviations, in mesh length units")
    noise.add_argument("--seeds", type=int_list, default=[0, 1, 2, 3, 4], help="Comma list of seeds")
    noise.add_argument("--out", help="Report file")

    move = commands.add_parser("movesource", parents=[shared], help="Source moving along a straight path")
    move.add_argument("mesh")
    move.add_argument("--from", dest="start", required=True, help="'face:l0,l1,l2' or 'v:index'")
    move.add_argument("--to", dest="end", required=True, help="'face:l0,l1,l2' or 'v:index'")
    move.add_argument("--frames", type=int, default=10)
    move.add_argument("--fields-format", default="json", help="'json', 'ply' or 'none'")
    move.add_argument("--out", help="Frame table file")
    return parser


def run(args: argparse.Namespace, config: Config) -> None:
    pipeline = Pipeline(config)
    method = args.method or "pq"
    if args.command == "solve":
        pipeline.run_solve(args.mesh, args.sources, method, args.out)
    elif args.command == "converge":
        methods = (args.method,) if args.method else ("pq", "dfa-pl")
        pipeline.run_converge(args.mesh, args.levels, args.oracle, args.source, methods, args.out)
    elif args.command == "noise":
        pipeline.run_noise(args.mesh, args.sources, args.sigmas, args.seeds, method, args.out)
    elif args.command == "movesource":
        fields_format = None if args.fields_format == "none" else args.fields_format
        pipeline.run_movesource(args.mesh, args.start, args.end, args.frames, method, args.out, fields_format)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parses arguments, runs one command and maps failures to exit codes

    Returns:
        int: 0 on success, 1 input errors, 2 solver failures, 3 source errors
    """
    args = build_parser().parse_args(argv)
    try:
        config = Config.from_env().with_overrides(
            solver_tol=args.tol, max_workers=args.workers, log_format=args.log_format
        )
        logger = setup_logging(config)
    except GeodesicError as e:
        logging.getLogger("pqgeodesic").error(str(e))
        return e.exit_code

    try:
        run(args, config)
    except GeodesicError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
