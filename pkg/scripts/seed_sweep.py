"""Repeat the desk experiment over several seeds and summarize the directional comparisons.

    python scripts/seed_sweep.py --seeds 0 1 2 3 4 --root runs/sweep
"""
import argparse
import csv
import json
from pathlib import Path

import numpy as np

from qaoa_transfer.pipeline import ExperimentConfig, run_experiment


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--root", default="runs/sweep")
    ap.add_argument("--method", default="ChebConv")
    args = ap.parse_args()

    print("seed  p  " + "  ".join(f"{m:>11}" for m in ("GCN", "GraphConv", "ChebConv", "G2V", "Closeness", "RandomDonor")))
    ws = []
    for s in args.seeds:
        out = Path(args.root) / f"seed{s}"
        cfg = ExperimentConfig.preset("desk", seed=s, out_dir=str(out))
        stored = json.loads((out / "config.json").read_text()) if (out / "config.json").exists() else None
        if not (out / "manifest.json").exists() or stored != cfg.to_dict():
            run_experiment(cfg)
        table = rows(out / "table1.csv")
        for p in cfg.depths:
            vals = {r["method"]: float(r["mean_best_r"]) for r in table if int(r["p"]) == p}
            print(f"{s:>4} {p:>2}  " + "  ".join(f"{v:11.4f}" for v in vals.values()))
        for p in cfg.depths:
            ws += [(p, r) for r in rows(out / f"warmstart_p{p}.csv")]

    print("\nwarm start, acceptors whose transferred r >= threshold")
    for p in sorted({p for p, _ in ws}):
        sel = [r for q, r in ws if q == p and int(r["passes_threshold"])]
        means = {c: np.mean([float(r[f"{c}_r"]) for r in sel]) for c in ("direct", "transfer_10", "random", "random_10")}
        print(f"p={p} n={len(sel)} " + " ".join(f"{c}={v:.4f}" for c, v in means.items()))


if __name__ == "__main__":
    main()
