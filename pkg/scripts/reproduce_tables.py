"""Run the canned Monte Carlo tables and compare the means with the stored reference values."""

import argparse
import time
from pathlib import Path

import numpy as np

from nlhet.montecarlo import load_experiment, run_experiment


def compare(exp, rep):
    method = "cml" if "cml" in exp.methods else "cls"
    worst = 0.0
    for noise, rows in exp.reference.items():
        for row, per_n in enumerate(rows):
            for j, n in enumerate(exp.n_list):
                cell = rep.cell(row, n, method, noise)
                d = float(np.max(np.abs(cell.mean - np.array(per_n[j]))))
                worst = max(worst, d)
                flag = "" if d <= exp.tolerance else "  <-- outside tolerance"
                print(f"  {noise:>9} row {row} n={n:<4} {method} mean {np.round(cell.mean, 3)} "
                      f"ref {per_n[j]} fail {cell.failures}{flag}")
    return worst


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("tables", nargs="*", default=["table1", "table2", "table3", "table4"])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.tables:
        exp = load_experiment(name)
        if args.reps:
            exp.reps = args.reps
        t = time.perf_counter()
        rep = run_experiment(exp, jobs=args.jobs)
        secs = time.perf_counter() - t
        rep.to_csv(args.out / f"{name}.csv")
        print(f"{name}: {exp.reps} reps in {secs:.1f}s")
        worst = compare(exp, rep)
        print(f"{name}: max |mean - reference| = {worst:.4f} (tolerance {exp.tolerance})")


if __name__ == "__main__":
    main()
