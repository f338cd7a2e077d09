"""Command-line entry point: ``rcgp {baseline,tune,evaluate,report}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .evolution import CROSSOVER_KINDS
from .experiment import ConfigError, cmd_baseline, cmd_evaluate, cmd_report, cmd_tune, load_config
from .regression import DatasetError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--dataset", help="override the dataset path")
    p.add_argument("--operator", choices=CROSSOVER_KINDS, help="run a single crossover kind")
    p.add_argument("--seeds", help="seed range such as 1..30 (evaluation seeds; tuning seeds for 'tune')")
    p.add_argument("--budget", type=int, help="fitness evaluations per run")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcgp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="runs with the configured baseline hyperparameters")
    _common(p)
    p.add_argument("--force", action="store_true", help="re-run cells that already have a record")

    p = sub.add_parser("tune", help="cross-validated hyperparameter tuning")
    _common(p)
    p.add_argument("--trials", type=int, help="objective evaluations per tuning run")

    p = sub.add_parser("evaluate", help="runs of the tuned incumbents")
    _common(p)
    p.add_argument("--force", action="store_true", help="re-run cells that already have a record")

    p = sub.add_parser("report", help="median/quartile tables with Mann-Whitney ties")
    p.add_argument("records", nargs="+", help="record directories to aggregate")
    p.add_argument("--out", required=True, help="directory for the report files")
    p.add_argument("--metric", choices=("test_mse", "train_mse"), default="test_mse")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--group-by", choices=("operator", "config"), default="operator")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "report":
            paths = cmd_report(args.records, args.out, args.metric, args.alpha, args.group_by)
            for p in paths.values():
                print(p)
            return EXIT_OK
        overrides = {
            "dataset": args.dataset,
            "operators": args.operator,
            "budget": args.budget,
            "out": args.out,
            "workers": args.workers,
            "trials": getattr(args, "trials", None),
        }
        if args.seeds is not None:
            key = "tuning_seeds" if args.command == "tune" else "evaluation_seeds"
            overrides[key] = args.seeds
        config = load_config(args.config, overrides)
    except (ConfigError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "baseline":
            records = cmd_baseline(config, force=args.force)
        elif args.command == "tune":
            records = cmd_tune(config)
        else:
            records = cmd_evaluate(config, force=args.force)
    except (ConfigError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logging.getLogger(__name__).exception("run failed")
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = [r for r in records if r.get("failed")]
    print(f"{args.command}: {len(records) - len(failed)} completed, {len(failed)} failed -> {config.out}")
    return EXIT_RUNTIME if failed else EXIT_OK
