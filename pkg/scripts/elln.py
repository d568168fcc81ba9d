"""Variance of the sampled aggregate against N for a given graphon family."""
import argparse

from graphon_lq.equilibrium import solve_equilibrium
from graphon_lq.graphon import Constant, MinMax, PowerLaw
from graphon_lq.model import GameCoefficients
from graphon_lq.monte_carlo import SimConfig, elln_check

FAMILIES = {"constant": (Constant(1.0), 1), "power_law": (PowerLaw(-0.4), 1), "min_max": (MinMax(), 40)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("family", choices=sorted(FAMILIES), nargs="?", default="constant")
    ap.add_argument("--N", type=int, nargs="+", default=[16, 32, 64, 128, 256, 512])
    ap.add_argument("--x", type=float, default=0.5)
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    kernel, K = FAMILIES[args.family]
    sol = solve_equilibrium(GameCoefficients.benchmark(), kernel, K, n_steps=2000)
    res = elln_check(sol, kernel, args.N, SimConfig(args.paths, 400, args.seed), x=args.x)
    for N, v in zip(res.N, res.variance):
        print(f"N={N:4d} var={v:.6g} N*var={N * v:.6g}")
    print(f"slope {res.slope:.4f}" if res.slope is not None else "slope undefined (zero variance)")


if __name__ == "__main__":
    main()
