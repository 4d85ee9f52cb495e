"""
Command-line entry point.

    python -m src.cli --preset exp1 --algo handshake --out results.csv
    python -m src.cli --scenario scenarios/exp2_sdn.toml --check
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .config import Settings, configure_logging
from .errors import ScenarioError, TopologyError
from .results import FORMATS, emit_results, emit_utilization, medians, rows_frame
from .scenario import PRESETS, Algorithm, ScenarioConfig, load_scenario, preset
from .simulation import check_scenario, run_sweep

logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Simulate EVPN designated forwarder selection and write per-run results."
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="Path to a TOML scenario file.")
    source.add_argument("--preset", choices=sorted(PRESETS), help="Built-in experiment.")
    parser.add_argument(
        "--algo",
        choices=[a.value for a in Algorithm],
        default=None,
        help="DF selection algorithm (overrides the scenario's).",
    )
    parser.add_argument("--runs", type=int, default=None, help="Repetitions per sweep point.")
    parser.add_argument("--seed", type=int, default=None, help="Base seed; run i uses seed + i.")
    parser.add_argument(
        "--time-scale",
        type=float,
        default=None,
        help="Multiply preset time constants (poll interval, ramp steps, duration).",
    )
    parser.add_argument("--out", default=None, help="Result file (default: <output dir>/<name>_<algo>.<format>).")
    parser.add_argument("--format", choices=FORMATS, default="csv", help="Result file format (default: csv).")
    parser.add_argument(
        "--check",
        action="store_true",
        help="Run the invariant suite (per-run, trend and determinism checks) and write nothing.",
    )
    parser.add_argument("--workers", type=int, default=None, help="Parallel simulations (default: EVPNSIM_WORKERS).")
    parser.add_argument("--log-level", default=None, help="Logging level (default: EVPNSIM_LOG_LEVEL or INFO).")
    return parser.parse_args(argv)


def load_config(args: argparse.Namespace) -> ScenarioConfig:
    if args.preset:
        config = preset(args.preset, time_scale=args.time_scale)
    else:
        config = load_scenario(args.scenario)
        if args.time_scale is not None:
            logger.warning("--time-scale only applies to presets; ignored for %s", args.scenario)
    if args.algo:
        config = replace(config, algorithm=Algorithm(args.algo))
    if args.runs is not None:
        config = replace(config, runs=args.runs)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def output_path(args: argparse.Namespace, config: ScenarioConfig, settings: Settings) -> Path:
    if args.out is None:
        return settings.output_dir / f"{config.name}_{config.algorithm.value}.{args.format}"
    out = Path(args.out)
    return out if out.parent != Path(".") else settings.output_dir / out


def log_summary(config: ScenarioConfig, rows) -> None:
    dup = medians(rows, "duplicates")
    lost = medians(rows, "lost")
    for (_, d), (_, l) in zip(dup.iterrows(), lost.iterrows()):
        logger.info(
            "%s delay %g ms @ %g Mbps: median duplicates %g, median lost %g",
            config.algorithm.value,
            d["inter_pe_delay_ms"],
            d["bum_rate_mbps"],
            d["duplicates"],
            l["lost"],
        )
    changes = rows_frame(rows)["df_change_count"]
    logger.info("DF changes per run: min %d, max %d", changes.min(), changes.max())


def utilization_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}_utilization{path.suffix}")


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    try:
        settings = Settings.from_env()
    except RuntimeError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    configure_logging(args.log_level or settings.log_level)
    workers = args.workers if args.workers is not None else settings.workers

    try:
        config = load_config(args)
        config.validate()
    except (ScenarioError, TopologyError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.check:
        result, problems = check_scenario(config, workers)
        log_summary(config, result.rows)
        for problem in problems:
            print(f"Invariant violated: {problem}", file=sys.stderr)
        if problems:
            return EXIT_INVARIANT
        logger.info("all invariants hold for %s/%s", config.name, config.algorithm.value)
        return EXIT_OK

    result = run_sweep(config, workers)
    log_summary(config, result.rows)
    try:
        path = output_path(args, config, settings)
        emit_results(result.rows, path, args.format)
        if result.utilization:
            emit_utilization(result.utilization, utilization_path(path), args.format)
    except (RuntimeError, ValueError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for violation in result.violations:
        print(f"Invariant violated: {violation}", file=sys.stderr)
    return EXIT_INVARIANT if result.violations else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
