"""Count guardrail invariant violations over policies, sizes, loads and dispatcher setups.

    python3 scripts/invariant_sweep.py --jobs 1e5
"""
import argparse
import itertools

from lbguard.netsim import DelaySpec
from lbguard.simcore import SimConfig, run_experiment
from lbguard.sizedist import Bimodal, BoundedPareto, Deterministic, Exponential, Hyperexponential

DISTS = {"det": Deterministic(1.0), "bimodal": Bimodal(1.0, 1000.0, 0.9995), "exp": Exponential(1.0),
         "h2": Hyperexponential.balanced(1.5, 444.0), "bp": BoundedPareto(1.5, 1.0, 1e6)}
POLICIES = ["Random", "RR", "LWL", "JSQ", "JSQd", "SITA-E"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=lambda v: int(float(v)), default=100_000)
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.5, 0.8, 0.98])
    ap.add_argument("--dispatchers", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--delay", type=float, default=0.0, help="mean of exponential reset delays")
    ap.add_argument("--scheduling", default="Prio")
    args = ap.parse_args()

    delay = DelaySpec("exponential", args.delay) if args.delay > 0 else None
    total = 0
    for (dn, dist), pol, rho, d in itertools.product(DISTS.items(), POLICIES, args.rhos,
                                                      args.dispatchers):
        st = run_experiment(SimConfig(k=10, dist=dist, rho=rho, policy=pol, guarded=True,
                                      scheduling=args.scheduling, dispatchers=d, reset_delay=delay,
                                      jobs_per_trial=args.jobs, seed=3))
        total += st.violations
        print(f"{dn:<8} {pol:<7} rho={rho:<5} d={d}  tight={st.tightness_violations} "
              f"global={st.global_violations} lemma={st.lemma_violations} "
              f"unsafe={st.unsafe_resets} resets={st.resets_applied}/{st.resets_ignored}")
    print(f"total violations: {total}")


if __name__ == "__main__":
    main()
