"""Run the full desk-scale experiment for one seed and print the summary tables.

    python scripts/run_desk.py --seed 0 --out-dir runs/desk-s0
"""
import argparse
import logging
import sys
from pathlib import Path

from qaoa_transfer.pipeline import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/desk")
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = run_experiment(ExperimentConfig.preset(args.preset, seed=args.seed, out_dir=args.out_dir))
    for name in ("table1.csv", "warmstart_summary.csv"):
        print(f"# {name}")
        sys.stdout.write(Path(out, name).read_text())


if __name__ == "__main__":
    main()
