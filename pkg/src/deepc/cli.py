"""``deepc-bench``: run the benchmark experiments from the command line.

Subcommands: ``equivalence``, ``figure8``, ``step-stats``, ``reg-sweep``,
``collect`` (data generation only), ``solve`` (single open-loop solve from
files).  Each accepts ``--config PATH`` (flat key=value file), ``--seed``,
``--out`` and ``--reps``; flags override file values.  The exit code is 0
only when the experiment finished and its PASS condition (if any) held.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import load_config, run_experiment

_EXPERIMENTS = (
    ("equivalence", "closed-loop MPC vs data-driven planner agreement"),
    ("figure8", "quadcopter figure-eight tracking, both methods"),
    ("step-stats", "paired quadcopter step-response statistics"),
    ("reg-sweep", "average cost over regularization-weight grids"),
    ("collect", "generate one quadcopter excitation record"),
    ("solve", "single open-loop solve from recorded files"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepc-bench",
        description="data-driven predictive control benchmark experiments",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, help_text in _EXPERIMENTS:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, help="flat key=value config file")
        cmd.add_argument("--seed", type=int, help="master seed (default 0)")
        cmd.add_argument("--out", type=Path, help="output directory")
        cmd.add_argument("--reps", type=int, help="repetition count override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.experiment,
            path=args.config,
            seed=args.seed,
            reps=args.reps,
            out=args.out,
        )
        report = run_experiment(cfg)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    for line in report.summary:
        print(line)
    print(f"RESULT: {report.verdict}")
    return 0 if report.verdict in ("PASS", "DONE") else 1


if __name__ == "__main__":  # pragma: no cover - exercised via console script
    sys.exit(main())
