"""Command line entry point: ``tokentrim run | compare | presets``."""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from ..errors import ConfigError, TokenTrimError
from .config import PRESETS, ExperimentConfig, from_dict, load_config, preset
from .records import compare_runs, emit_metrics, load_run
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokentrim", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write steps.csv + summary.json")
    run.add_argument("--config", help="YAML config file")
    run.add_argument("--preset", help="built-in preset (overrides the file's preset)")
    run.add_argument("--seed", type=int, action="append", help="seed to run; repeatable")
    run.add_argument("--steps", type=int, help="steps per stream")
    run.add_argument("--workers", type=int, default=1, help="process pool size")
    run.add_argument("--out", required=True, help="output directory")

    cmp_ = sub.add_parser("compare", help="paired comparison of two run directories (B - A)")
    cmp_.add_argument("a")
    cmp_.add_argument("b")

    pre = sub.add_parser("presets", help="built-in presets")
    pre_sub = pre.add_subparsers(dest="action", required=True)
    pre_sub.add_parser("list")
    show = pre_sub.add_parser("show")
    show.add_argument("name")
    return p


def _load(args) -> ExperimentConfig:
    overrides = {}
    if args.seed:
        overrides["seeds"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.config:
        cfg = load_config(args.config, args.preset)
        doc = cfg.to_dict()
        doc.update(overrides)
        return from_dict(doc)
    return preset(args.preset or "tokentrim-default", **overrides)


def _run(args) -> int:
    cfg = _load(args)
    records = run_experiment(cfg, workers=args.workers)
    csv_path, json_path = emit_metrics(records, args.out, cfg.to_dict())
    for rec in records:
        agg = rec.aggregates
        print(
            f"seed {rec.seed}: triggers={agg['trigger_count']} area={agg['drift_area']:.6g} "
            f"rows={agg['alive_rows_total']} ({rec.wall_clock:.2f}s)"
        )
    print(f"wrote {csv_path} and {json_path} (config {cfg.config_hash()})")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "compare":
            print(compare_runs(load_run(args.a), load_run(args.b)).format_table())
            return EXIT_OK
        if args.action == "list":
            for name, (desc, _) in PRESETS.items():
                print(f"{name:<30} {desc}")
            return EXIT_OK
        if args.name not in PRESETS:
            raise ConfigError(f"unknown preset {args.name!r}", "preset")
        print(yaml.safe_dump(preset(args.name).to_dict(), sort_keys=False), end="")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TokenTrimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
