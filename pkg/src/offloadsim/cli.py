"""Command-line experiment runner.

Verbs: run, sweep, compare, oracle. Exit codes: 0 ok, 1 validation
problem, 2 numerical failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import simctl


def _load_raw(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise simctl.ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise simctl.ConfigError(f"config is not valid JSON: {exc}")


def _parse_values(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise simctl.ConfigError(f"cannot parse sweep values from {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offloadsim",
        description="Seedable edge-offloading simulator and experiment runner",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="repeat runs across parameter values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True,
                         help="dotted config path, e.g. system.p_t")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values")
    p_sweep.add_argument("--reps", type=int, default=20)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", required=True)

    p_cmp = sub.add_parser("compare", help="run several modes on one seed")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--modes", required=True,
                       help="comma-separated subset of fl,centralized,greedy")
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--out", required=True)

    p_oracle = sub.add_parser("oracle",
                              help="frozen-scenario knapsack oracle check")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--train-epochs", type=int, default=0)
    p_oracle.add_argument("--seed", type=int, default=None)
    p_oracle.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = _load_raw(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.verb == "run":
            summary = simctl.run(simctl.parse_config(raw), args.out)
            print(json.dumps(summary, indent=2))
        elif args.verb == "sweep":
            simctl.parse_config(raw)  # fail fast on the base config
            payload = simctl.sweep(raw, args.param, _parse_values(args.values),
                                   args.reps, args.out)
            print(json.dumps(payload["results"], indent=2))
        elif args.verb == "compare":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            for m in modes:
                if m not in simctl.MODES:
                    raise simctl.ConfigError(f"unknown mode {m!r}")
            report = simctl.compare(raw, modes, args.out)
            print(json.dumps(report, indent=2))
        else:
            report = simctl.oracle_check(simctl.parse_config(raw),
                                         args.train_epochs, args.out)
            print(json.dumps(report, indent=2))
    except simctl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (simctl.NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
