"""Command line interface.

Subcommands: ``run`` executes a configured experiment, ``aggregate`` turns
record files into a plot-ready aggregate CSV, ``report`` summarizes the
strategy sweep, ``validate`` runs the built-in oracle checks.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

from . import backend, validate
from .config import (
    ConfigError,
    ExperimentConfig,
    Strategy,
    parse_config_file,
    resolve_output_dir,
    with_overrides,
)
from .harness import (
    HarnessError,
    aggregate,
    format_sweep_text,
    load_records,
    run_experiment,
    sweep_report,
    write_aggregate_csv,
    write_sweep_json,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slicesim",
        description="Sliced backhaul link simulator with an online-trained allocator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (key = value lines)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--runs", type=int, help="override the number of runs")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--strategy", action="append", default=None,
                       help="restrict to this strategy (repeatable)")

    p_run = sub.add_parser("run", help="simulate and write per-run record CSVs")
    common(p_run)
    p_run.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p_agg = sub.add_parser("aggregate", help="aggregate record CSVs across runs")
    common(p_agg)
    p_agg.add_argument("--stride", type=int, help="episodes between aggregate points")

    p_rep = sub.add_parser("report", help="summarize the strategy sweep")
    common(p_rep)

    p_val = sub.add_parser("validate", help="run the built-in correctness checks")
    p_val.add_argument("--quiet", action="store_true")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config_file(args.config)
    else:
        cfg = ExperimentConfig()
    chosen: Optional[List[Strategy]] = None
    if args.strategy:
        known = {s.name: s for s in cfg.strategies}
        chosen = []
        for name in args.strategy:
            if name not in known:
                raise ConfigError(
                    f"strategy {name!r} is not in the configured set {sorted(known)}")
            chosen.append(known[name])
    return with_overrides(cfg, seed=args.seed, runs=args.runs, strategies=chosen)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    try:
        if args.command == "validate":
            ok = validate.run_all(verbose=not args.quiet)
            if not args.quiet:
                print(f"backend: {backend.backend_name()}")
            return 0 if ok else 1

        cfg = _load_config(args)
        out_dir = resolve_output_dir(cfg, args.out)

        if args.command == "run":
            paths = run_experiment(cfg, out_dir, quiet=args.quiet)
            if not args.quiet:
                print(f"wrote {len(paths)} record files under {out_dir}")
            return 0

        records_dir = os.path.join(out_dir, "records")
        data = load_records(records_dir)
        if args.strategy:
            data = {k: v for k, v in data.items() if k in set(args.strategy)}
            if not data:
                raise HarnessError("no records left after the strategy filter")

        if args.command == "aggregate":
            stride = args.stride if args.stride else cfg.sample_stride
            rows = aggregate(data, stride, episodes=None)
            path = os.path.join(out_dir, "aggregate.csv")
            write_aggregate_csv(rows, path)
            print(f"wrote {len(rows)} aggregate rows to {path}")
            return 0

        if args.command == "report":
            report = sweep_report(data)
            path = os.path.join(out_dir, "sweep.json")
            write_sweep_json(report, path)
            print(format_sweep_text(report))
            return 0

        parser.error(f"unknown command {args.command!r}")
        return 2
    except (ConfigError, HarnessError) as exc:
        print(f"slicesim: error: {exc}", file=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
