"""Command-line front end.

``driftspec <experiment> --config PATH [--out DIR] [--seed N] [--threads N] [--format csv]``
runs one experiment; ``driftspec report RUN...`` consolidates finished runs.
Exit status: 0 on success, 2 for invalid configurations, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .assembly import SolverError
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, ReportError, emit_report, report_csv, run_config
from .domain import DomainError
from .fields import FieldError
from .io import atomic_write
from .ricci import FlowError
from .variation import BranchMatchingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERICAL_ERRORS = (SolverError, BranchMatchingError, FieldError, DomainError, FlowError,
                    ArithmeticError, ValueError)

log = logging.getLogger("driftspec")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftspec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, type=Path, help="JSON experiment configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config 'output' or ./runs/<kind>)")
        p.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, default=None, help="worker threads, overrides the config")
        p.add_argument("--format", choices=["csv"], default="csv", help="table format")
    rep = sub.add_parser("report", help="consolidate the checks of finished runs")
    rep.add_argument("runs", nargs="*", type=Path, help="run directories or manifest.json files")
    rep.add_argument("--out", type=Path, default=None, help="write report.csv here instead of stdout")
    rep.add_argument("--format", choices=["csv"], default="csv")
    return parser


def _report(args) -> int:
    try:
        rows = emit_report(args.runs)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = report_csv(rows)
    if args.out is not None:
        atomic_write(Path(args.out) / "report.csv", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return _report(args)
    try:
        cfg = ExperimentConfig.load(args.config, experiment=args.command, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.raw.get("output", Path("runs") / args.command))
    try:
        manifest = run_config(cfg, out)
    except NUMERICAL_ERRORS as exc:
        residual = getattr(exc, "residual", None)
        extra = f" (residual {residual:.3e})" if residual is not None else ""
        print(f"numerical failure: {type(exc).__name__}: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("wrote %d files to %s in %.2fs", len(manifest.files), out, manifest.elapsed)
    print(out / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
