"""Command line interface for pmac_learning."""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from .config import LOG_LEVELS, Settings
from .errors import PMACError, ScenarioError
from .experiments import ExperimentService, SolverOptions, list_experiments
from .parsers import parse_scenario
from .repository import ResultRepository

logger = logging.getLogger("pmac_learning")

EXIT_RUNTIME_ERROR = 1
EXIT_SCENARIO_ERROR = 2


def build_service(settings: Settings, output_dir: Path) -> ExperimentService:
    return ExperimentService(
        repository=ResultRepository(output_dir),
        workers=settings.workers,
        options=SolverOptions(tol=settings.solver_tol, max_iterations=settings.max_iterations),
    )


def cmd_run(args: argparse.Namespace, settings: Settings) -> None:
    scenario = parse_scenario(args.scenario)
    scenario = scenario.with_overrides(
        seed=args.seed,
        n_realizations=args.realizations,
        output_dir=args.out,
        paper_scale=args.paper_scale,
    )
    output_dir = scenario.output_dir or settings.output_dir / scenario.name
    report = build_service(settings, output_dir).run(scenario)
    print(f"Wrote {len(report.files)} files to {report.output_dir}")


def cmd_list(args: argparse.Namespace, settings: Settings) -> None:
    for info in list_experiments():
        print(f"{info.kind.value:<18} {info.figure:<20} requires: {', '.join(info.required)}")
        print(f"{'':<18} {info.description}")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run PMAC power-allocation learning experiments")
    parser.add_argument("--log-level", choices=LOG_LEVELS, help="Override the configured log level")
    parser.add_argument("--workers", type=int, help="Worker processes for realizations")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run the experiment described by a scenario file")
    run_parser.add_argument("scenario", type=Path, help="Scenario JSON file")
    run_parser.add_argument("--out", type=Path, help="Output directory")
    run_parser.add_argument("--seed", type=int, help="Override the scenario seed")
    run_parser.add_argument("--realizations", type=int, help="Override the number of realizations")
    run_parser.add_argument(
        "--paper-scale", action="store_true", help="Use the scenario's paper-scale realization count"
    )
    run_parser.set_defaults(func=cmd_run)

    list_parser = subparsers.add_parser("list", help="List the available experiments")
    list_parser.set_defaults(func=cmd_list)

    return parser


def main(argv: list[str] | None = None) -> None:
    parser = create_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings.load()
    except ValueError as exc:
        raise SystemExit(f"Invalid settings: {exc}") from exc
    if args.log_level:
        settings = replace(settings, log_level=args.log_level)
    if args.workers is not None:
        settings = replace(settings, workers=args.workers)
        try:
            settings.validate()
        except ValueError as exc:
            raise SystemExit(str(exc)) from exc
    logging.basicConfig(level=settings.numeric_log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        args.func(args, settings)
    except ScenarioError as exc:
        logger.error("%s", exc)
        raise SystemExit(EXIT_SCENARIO_ERROR) from exc
    except PMACError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        raise SystemExit(EXIT_RUNTIME_ERROR) from exc


if __name__ == "__main__":
    main()
