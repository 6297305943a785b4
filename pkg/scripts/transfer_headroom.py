"""Diagnostics for a finished run: how much room retrieval and warm starts have.

For each test acceptor this compares (a) the sampled best r of the five donors
with the highest true transfer score against the average of many random
five-donor draws, and (b) the exact ratio of the retrieved angles against the
best ratio reachable at the same depth from a long multistart search.

    python scripts/transfer_headroom.py runs/desk-s0 --p 1
"""
import argparse
import csv
import json
from pathlib import Path

import numpy as np

from qaoa_transfer.pipeline import (Experiment, ExperimentConfig, candidates_for, evaluate_transfer,
                                    random_donors)
from qaoa_transfer.qaoa import OptConfig, multistart
from qaoa_transfer.seeding import derive_seed
from qaoa_transfer.simulator import CircuitSpec, Problem


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir")
    ap.add_argument("--p", type=int, default=1)
    ap.add_argument("--draws", type=int, default=20)
    args = ap.parse_args()
    run = Path(args.run_dir)
    cfg = ExperimentConfig.from_dict(json.loads((run / "config.json").read_text()))
    exp = Experiment(cfg)
    graphs, mis, bank, split = exp.graph_index(), exp.mis_solutions(), exp.bank(args.p), exp.split()
    with open(run / f"triples_p{args.p}.csv") as fh:
        y = {(r["acceptor_id"], r["donor_id"]): float(r["y"]) for r in csv.DictReader(fh)}
    donors = list(bank.entries)

    oracle, rand = [], []
    for acc in split.test:
        top = sorted(donors, key=lambda d: (-y[(acc, d)], d))[: cfg.k]
        oracle.append(evaluate_transfer(graphs[acc], candidates_for(top, bank), cfg.shots, cfg.seed, mis[acc]).best_r)
        rand.append(np.mean([
            evaluate_transfer(graphs[acc], candidates_for(random_donors(donors, cfg.k, derive_seed("draw", j, acc)), bank),
                              cfg.shots, cfg.seed, mis[acc]).best_r for j in range(args.draws)]))
    print(f"true-score top-{cfg.k}: {np.mean(oracle):.4f}   random top-{cfg.k} (avg of {args.draws}): {np.mean(rand):.4f}")

    ws_path = run / f"warmstart_p{args.p}.csv"
    if ws_path.exists():
        with open(ws_path) as fh:
            ws = list(csv.DictReader(fh))
        best = []
        for r in ws:
            g = graphs[r["acceptor_id"]]
            traces = multistart(CircuitSpec(Problem.MIS, g, args.p), 8, OptConfig(seed=7))
            best.append(max(t.final_objective for t in traces) / mis[g.id].optimum)
        print(f"retrieved exact r: {np.mean([float(r['transfer_exact_r']) for r in ws]):.4f}   "
              f"after warm start: {np.mean([float(r['transfer_10_r']) for r in ws]):.4f}   "
              f"depth-{args.p} optimum: {np.mean(best):.4f}")


if __name__ == "__main__":
    main()
