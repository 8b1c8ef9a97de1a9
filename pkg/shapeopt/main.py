"""
Command line front end.

    shapeopt run <config>
    shapeopt verify <gradient|hessian|operators|all>
    shapeopt report <history.csv ...> --baseline-time <s> --baseline-iters <n>
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from shapeopt import __version__
from shapeopt.core.config import get_settings
from shapeopt.core.exceptions import (
    EXIT_FAILURE,
    EXIT_SUCCESS,
    CheckFailedError,
    ShapeOptException,
    handle_cli_exception,
)
from shapeopt.core.logging import get_app_logger, log_error
from shapeopt.schemas.history import read_history_csv
from shapeopt.schemas.report import ComparisonRow, format_comparison, write_comparison_csv
from shapeopt.schemas.run_config import RunConfig, load_run_config
from shapeopt.services.geometry import write_surface_csv, write_volume_csv
from shapeopt.services.oneshot import retardation
from shapeopt.services.scenario import RunResult, run_scenario
from shapeopt.services.sobolev import assemble_surface_operators, write_operators
from shapeopt.services.verification import LEVELS, run_verification

logger = get_app_logger()

ONESHOT_ALGORITHMS = ("oneshot", "oneshot_constrained")


def output_directory(config: RunConfig) -> Path:
    """SHAPEOPT_OUTPUT_DIR wins over output.directory."""
    override = get_settings().output_dir
    return Path(override if override else config.output.directory)


def write_artifacts(result: RunResult, directory: Path) -> List[Path]:
    config = result.scenario.config
    design = result.scenario.design
    p_final = np.asarray(result.history.final_p, dtype=float)
    directory.mkdir(parents=True, exist_ok=True)

    written = [
        result.history.to_csv(directory / "history.csv", record_time=config.output.record_time),
        directory / "summary.json",
        write_surface_csv(design.surface(p_final), directory / "surface.csv"),
    ]
    written[1].write_text(result.summary.model_dump_json(indent=2), encoding="utf-8")

    if config.optimizer.algorithm in ONESHOT_ALGORITHMS:
        written.append(result.history.piggyback_to_csv(directory / "piggyback_residuals.csv"))
    if config.output.write_volume:
        written.append(write_volume_csv(design.volume(p_final), directory / "volume.csv"))
    if config.output.write_operators:
        ops = assemble_surface_operators(design.surface(p_final))
        hybrid = getattr(result.scenario.builder, "last", None)
        written.extend(write_operators(directory / "operators", ops, hybrid).values())
    return written


def cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    directory = output_directory(config)
    logger.info(f"Running '{config.name}' into {directory}")
    result = run_scenario(config)
    written = write_artifacts(result, directory)
    summary = result.summary
    logger.info(
        f"Run '{config.name}' {summary.termination}: objective {summary.final_objective:.10g}, "
        f"{summary.iterations} iterations, {len(written)} artifacts"
    )
    return EXIT_SUCCESS


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_verification(args.level, args.seed)
    text = report.to_text()
    directory = Path(args.output) if args.output else Path(get_settings().output_dir or ".")
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"verify_{args.level}.txt"
    path.write_text(text, encoding="utf-8")
    print(text)

    for check in report.failures:
        failure = CheckFailedError(check.check_id, check.measured, check.tolerance)
        log_error(error=failure, context={"command": "verify", "level": args.level})
        print(failure.message, file=sys.stderr)
    logger.info(f"Verification report written to {path}")
    return EXIT_SUCCESS if report.passed else EXIT_FAILURE


def _summary_next_to(history_path: Path) -> dict:
    summary_path = history_path.with_name("summary.json")
    if not summary_path.exists():
        return {}
    return json.loads(summary_path.read_text(encoding="utf-8"))


def comparison_row(history_path: Path, baseline_time: Optional[float],
                   baseline_iters: Optional[float]) -> ComparisonRow:
    """One table row; wall time and sweeps come from a sibling summary.json when present."""
    try:
        history = read_history_csv(history_path)
        summary = _summary_next_to(history_path)
    except (OSError, ValueError) as e:
        raise ShapeOptException(f"Cannot read history '{history_path}': {e}", code="HISTORY_READ_ERROR",
                                details={"path": str(history_path)})

    wall_time = float(summary.get("wall_time_s") or history.time_s[-1])
    sweeps = summary.get("total_sweeps")
    time_factor = iter_factor = None
    if baseline_time is not None:
        counted = sweeps if sweeps is not None else history.iterations
        factors = retardation(wall_time, baseline_time,
                              counted if baseline_iters is not None else None, baseline_iters)
        time_factor, iter_factor = factors.time_factor, factors.iter_factor

    c_min = [c for c in history.C_min if c is not None]
    return ComparisonRow(
        run=summary.get("name") or history_path.parent.name or history_path.stem,
        algorithm=summary.get("algorithm"),
        final_objective=history.objective[-1],
        E_max=history.E_max[-1],
        C_min=history.C_min[-1] if c_min else None,
        iterations=history.iterations,
        sweeps=sweeps,
        wall_time_s=wall_time,
        time_factor=time_factor,
        iter_factor=iter_factor,
    )


def cmd_report(args: argparse.Namespace) -> int:
    rows = [comparison_row(Path(p), args.baseline_time, args.baseline_iters) for p in args.histories]
    path = write_comparison_csv(rows, args.output)
    print(format_comparison(rows))
    logger.info(f"Comparison of {len(rows)} runs written to {path}")
    return EXIT_SUCCESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapeopt",
        description="Sobolev-smoothed shape optimization with piggyback One Shot solvers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the optimizer described by a YAML or JSON config")
    run.add_argument("config", help="Path to the run configuration")
    run.set_defaults(handler=cmd_run)

    verify = commands.add_parser("verify", help="Run the derivative and operator check suites")
    verify.add_argument("level", choices=LEVELS)
    verify.add_argument("--seed", type=int, default=None, help="Seed for random test vectors")
    verify.add_argument("--output", default=None, help="Directory for the report")
    verify.set_defaults(handler=cmd_verify)

    report = commands.add_parser("report", help="Compare run histories and compute retardation factors")
    report.add_argument("histories", nargs="+", help="history.csv files")
    report.add_argument("--baseline-time", type=float, default=None, help="Wall time of one state solve [s]")
    report.add_argument("--baseline-iters", type=float, default=None, help="Updates of one state solve")
    report.add_argument("--output", default="comparison.csv", help="CSV destination")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ShapeOptException as e:
        print(f"error: {e.message}", file=sys.stderr)
        return handle_cli_exception(e, args.command)


if __name__ == "__main__":
    sys.exit(main())
