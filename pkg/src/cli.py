"""
Command line for the grid-synchronisation lab
Run with: python src/cli.py --help
"""

import sys
import os

# Add project root to sys.path to allow imports from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from src.experiments import EXPERIMENTS, design, reproduce, run_sweep, simulate
from src.schema import load_scenario
from src.utils.config import config
from src.utils.errors import ConfigError, NumericalError
from src.utils.logger import logger

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _output_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else Path(config.OUTPUT_DIR) / default_name


def _load(args):
    if not args.config:
        raise ConfigError("--config is required for this command", field="--config")
    return load_scenario(args.config, args.set or [])


def cmd_design(args) -> int:
    cfg = _load(args)
    out = _output_dir(args, f"{cfg.scenario.name}_design")
    summary = design(cfg, out)

    print("\n" + "=" * 60)
    print("DESIGN")
    print("=" * 60)
    print(f"  LQR spectral radius:     {summary['lqr_spectral_radius']:.6f}")
    print(f"  LQR gain row 0:          {np.array2string(np.asarray(summary['lqr_gain_row0']), precision=4)}")
    print(f"  A_error spectral radius: {summary['aerror_spectral_radius']:.6f}")
    print(f"  Output: {out}")
    print("=" * 60)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _output_dir(args, cfg.scenario.name)
    trace, report = simulate(cfg, out, seed=args.seed)

    print("\n" + "=" * 60)
    print(f"SIMULATION: {cfg.scenario.name} ({cfg.scenario.method.value})")
    print("=" * 60)
    print(f"  Samples:                {len(trace)}")
    print(f"  Stability:              {report.stability.value}")
    print(f"  Steady phase error:     {report.steady_state_phase_error:.3e} rad")
    print(f"  Settling time:          {report.settling_time}")
    print(f"  Output: {out}")
    print("=" * 60)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _output_dir(args, f"{cfg.scenario.name}_sweep")
    table = run_sweep(cfg, jobs=args.jobs, seed=args.seed, out_dir=out)
    print(f"\n  {len(table)} sweep points written to {out / 'metrics.csv'}\n")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = Path(args.out) if args.out else Path(config.OUTPUT_DIR)
    summary = reproduce(args.experiment, out, seed=args.seed, jobs=args.jobs or 1)

    print("\n" + "=" * 60)
    print(f"REPRODUCE: {args.experiment}")
    print("=" * 60)
    for name, value in summary["checks"].items():
        if isinstance(value, bool):
            print(f"  [{'PASS' if value else 'MISS'}] {name}")
    print(f"  Output: {out / args.experiment}")
    print("=" * 60)
    return EXIT_OK


def cmd_list(args) -> int:
    print("Reproducible experiments:")
    for name, fn in EXPERIMENTS.items():
        print(f"  {name:<14} {(fn.__doc__ or '').strip()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Grid-following inverter synchronisation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs: bool = False):
        p.add_argument("--config", type=str, help="Scenario YAML document")
        p.add_argument("--out", type=str, help="Output directory")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="Override a config value by dotted key (repeatable)",
        )
        p.add_argument("--seed", type=int, default=None, help="Noise seed (overrides scenario.seed)")
        if jobs:
            p.add_argument("--jobs", type=int, default=None, help="Parallel workers (-1 for all cores)")

    p = sub.add_parser("design", help="LQR and Kalman design report")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="Run one scenario, write trace and metrics")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Run the sweep grid of a scenario")
    common(p, jobs=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", help="Run a canned experiment bundle")
    p.add_argument("experiment", type=str, help=f"One of: {', '.join(EXPERIMENTS)}")
    p.add_argument("--out", type=str, help="Parent output directory")
    p.add_argument("--seed", type=int, default=None, help="Noise seed")
    p.add_argument("--jobs", type=int, default=None, help="Parallel workers")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("list", help="List reproducible experiments")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    seed = getattr(args, "seed", None)
    if seed is not None and seed < 0:
        print(" Error: --seed must be non-negative")
        return EXIT_CONFIG

    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        print(f" Error: {e}")
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as e:
        logger.error(f"Numerical failure: {e}")
        print(f" Error: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n Interrupted by user\n")
        sys.exit(130)
