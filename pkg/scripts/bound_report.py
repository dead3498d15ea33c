"""Mean bound, single-server baselines and a simulated guarded Prio run per load.

    python3 scripts/bound_report.py --out results/bounds_bp.csv
"""
import argparse
from pathlib import Path

from lbguard.cli import emit_bound_report, write_bound_report
from lbguard.simcore import SimConfig, run_experiment
from lbguard.sizedist import BoundedPareto


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.5, 0.8, 0.9, 0.95, 0.98])
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--g", type=float, default=1.0)
    ap.add_argument("--policy", default="LWL")
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--jobs", type=lambda v: int(float(v)), default=200_000)
    ap.add_argument("--no-sim", action="store_true")
    ap.add_argument("--out", default="results/bounds_bp.csv")
    args = ap.parse_args()

    dist = BoundedPareto(1.5, 1.0, 1e6)
    sim = {}
    if not args.no_sim:
        for rho in args.rhos:
            st = run_experiment(SimConfig(k=args.k, dist=dist, rho=rho, policy=args.policy,
                                          guarded=True, g=args.g, scheduling="Prio",
                                          trials=args.trials, jobs_per_trial=args.jobs, seed=1))
            sim[rho] = (st.mean_T, st.ci_halfwidth_95)
    rows = emit_bound_report(dist, args.k, args.g, args.rhos, sim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bound_report(out, rows)
    for row in rows:
        print({k: (round(v, 3) if isinstance(v, float) else v) for k, v in row.items()})
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
