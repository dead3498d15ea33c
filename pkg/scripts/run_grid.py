"""Run a YAML grid and print mean response times as a table.

    python3 scripts/run_grid.py configs/fig2_bimodal.yaml --trials 5 --jobs 2e5

Writes the CSV and JSON sidecar exactly like ``lbguard run`` and then prints
one line per cell, grouped by load.
"""
import argparse
from pathlib import Path

from lbguard.cli import ExperimentGrid, run_grid, write_results_csv, write_sidecar


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=lambda v: int(float(v)))
    ap.add_argument("--parallelism", type=int, default=1)
    args = ap.parse_args()

    grid = ExperimentGrid.load(args.config)
    if args.trials:
        grid.base["trials"] = args.trials
    if args.jobs:
        grid.base["jobs_per_trial"] = args.jobs
    out = Path(grid.out or "results/grid.csv")
    out.parent.mkdir(parents=True, exist_ok=True)

    results = run_grid(grid, args.parallelism)
    write_results_csv(out, results)
    write_sidecar(out.with_suffix(".json"), grid, results)

    for r in sorted(results, key=lambda r: (r.row["rho"], r.index)):
        row = r.row
        tag = "G-" if row["guarded"] else ""
        val = f"{row['mean_T']:10.3f} ± {row['ci95_halfwidth']:.3f}" if r.status == "ok" else r.status
        print(f"rho={row['rho']:<5} {row['scheduling']:<5} {tag + row['policy']:<10} {val}"
              f"  viol={row['violations']}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
