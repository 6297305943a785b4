"""Command line entry point: ``qaoa-transfer <subcommand> [--config F] [--seed S] [--out-dir D] [--preset P]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline import Experiment, ExperimentConfig, StageError, load_config, run_experiment

SUBCOMMANDS = {
    "gen-graphs": "gen_graphs",
    "solve-exact": "solve_exact",
    "build-donor-bank": "build_donor_bank",
    "build-dataset": "build_dataset",
    "embed-g2v": "embed_g2v",
    "train-model": "train_models",
    "retrieve": "retrieve",
    "evaluate": "evaluate",
    "warmstart": "warmstart",
    "report": "report",
    "run-all": None,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding preset fields")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="directory for stage files and reports")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="qaoa-transfer", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.preset) if args.config else ExperimentConfig.preset(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return ExperimentConfig.from_dict(overrides, cfg) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    cfg = resolve_config(args)
    try:
        if args.command == "run-all":
            out = run_experiment(cfg)
        else:
            exp = Experiment(cfg)
            exp.run_stage(SUBCOMMANDS[args.command])
            out = exp.out
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command in ("run-all", "report"):
        with open(out / "table1.csv") as fh:
            sys.stdout.write(fh.read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
