"""Propagation-of-chaos and epsilon-Nash sweep along one sampled index stream."""
import argparse
import time
from pathlib import Path

from graphon_lq.graphon import Constant, MinMax, PowerLaw
from graphon_lq.io import write_csv, write_json
from graphon_lq.model import GameCoefficients
from graphon_lq.monte_carlo import SimConfig, convergence_sweep

FAMILIES = {"constant": (Constant(1.0), 1), "power_law": (PowerLaw(-0.4), 1), "min_max": (MinMax(), 40)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("family", choices=sorted(FAMILIES))
    ap.add_argument("--N", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--eps-max-N", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/convergence")
    args = ap.parse_args()

    kernel, K = FAMILIES[args.family]
    t0 = time.perf_counter()

    def progress(rec):
        print(f"N={rec.N:4d} delta={rec.delta_hat:.5g} eps_gap={rec.eps_gap} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)

    rep = convergence_sweep(kernel, GameCoefficients.benchmark(), args.N, SimConfig(args.paths, 400, args.seed),
                            K, n_steps=600, eps_max_N=args.eps_max_N, progress=progress)
    out = Path(args.out) / args.family
    write_csv(out / "convergence.csv", ["N", "delta_hat", "delta_se", "eps_gap", "elln_var", "ratio_loglog"],
              ((r.N, r.delta_hat, r.delta_se, r.eps_gap, r.elln_var, r.ratio_loglog) for r in rep.records))
    write_json(out / "convergence.json", rep.to_dict())
    print(f"log-log slope {rep.slope}")


if __name__ == "__main__":
    main()
