"""Guarded LWL against a single speed-1 SRPT server as load grows.

Prints the simulated ratio E[T]/E[T_SRPT] with its CI, next to the ratio of
the analytic mean bound to SRPT, for Bimodal and Bounded Pareto sizes.

    python3 scripts/heavy_traffic.py --trials 4 --jobs 5e5
"""
import argparse

from lbguard.analytic import BoundInputs, DivergentBound, mean_guarded_prio_bound, mean_mg1_response
from lbguard.simcore import SimConfig, run_experiment
from lbguard.sizedist import Bimodal, BoundedPareto

DISTS = {"bimodal": Bimodal(1.0, 1000.0, 0.9995), "bp": BoundedPareto(1.5, 1.0, 1e6)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.8, 0.9, 0.95, 0.98])
    ap.add_argument("--trials", type=int, default=4)
    ap.add_argument("--jobs", type=lambda v: int(float(v)), default=500_000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    print(f"{'dist':<8} {'rho':>6} {'sim/SRPT':>10} {'ci':>7} {'bound/SRPT':>11}")
    for name, dist in DISTS.items():
        for rho in args.rhos:
            lam = rho / dist.mean()
            srpt = mean_mg1_response(dist, lam, "SRPT")
            st = run_experiment(SimConfig(k=args.k, dist=dist, rho=rho, policy="LWL", guarded=True,
                                          scheduling="SRPT", trials=args.trials,
                                          jobs_per_trial=args.jobs, seed=args.seed))
            try:
                bound = mean_guarded_prio_bound(BoundInputs.from_rho(dist, rho, args.k)) / srpt
            except DivergentBound:
                bound = float("inf")
            print(f"{name:<8} {rho:>6} {st.mean_T / srpt:>10.3f} {st.ci_halfwidth_95 / srpt:>7.3f}"
                  f" {bound:>11.1f}")


if __name__ == "__main__":
    main()
