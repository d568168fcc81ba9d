"""Command-line entry point: ``graphon-lq <command> --config run.json``.

Exit codes: 0 ok, 1 configuration error, 2 model error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .equilibrium import fixed_point_oracle, solve_equilibrium
from .errors import (AssumptionViolation, ConfigError, DomainError, GraphonLQError, ModeIllPosedError,
                     NumericalError, OracleFailure, UnsupportedParameterError, WellPosednessError)
from .finite_game import nash_gaps, sample_game, solve_nash
from .graphon import decompose, midpoint_grid
from .io import to_json, write_csv, write_json
from .model import assemble_gamma, check_assumptions, check_mode_wellposedness
from .monte_carlo import (SimConfig, convergence_sweep, eps_nash_gap, occupation_histogram,
                          simulate_graphon_policy)

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("check", "solve", "simulate", "nplayer", "converge", "oracle")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (AssumptionViolation, WellPosednessError, DomainError, UnsupportedParameterError)):
        return EXIT_MODEL
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_MODEL


def thread_count(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get("GRAPHON_LQ_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"GRAPHON_LQ_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


class Run:
    """One invocation: effective config, output directory and a worker pool."""

    def __init__(self, command, cfg, out: Path, threads: int, oracle: bool):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.oracle = oracle
        self.kernel = cfg.graphon.kernel(cfg.base_dir)
        self.coeffs = cfg.coefficients.build()
        self.started = time.perf_counter()
        self.files = []

    def mapper(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(v) for v in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def wants(self, name: str) -> bool:
        return name in self.cfg.output.csv

    def csv(self, name, header, rows):
        if self.wants(name):
            self.files.append(write_csv(self.out / f"{name}.csv", header, rows).name)

    def solve(self, n_steps=None):
        s, g = self.cfg.solver, self.cfg.graphon
        return solve_equilibrium(self.coeffs, self.kernel, g.K_modes, grid_size=g.grid_size,
                                 n_steps=n_steps or self.cfg.n_steps, gamma_z2_literal=s.gamma_z2_literal,
                                 riccati_literal=s.riccati_literal, blowup_cap=s.blowup_cap,
                                 max_truncation_residual=s.max_truncation_residual,
                                 x=midpoint_grid(s.M_x))

    def finish(self, summary: dict):
        write_json(self.out / "config.json", self.cfg.to_dict())
        meta = {"command": self.command, "version": __version__, "threads": self.threads,
                "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
                "elapsed_seconds": time.perf_counter() - self.started, "files": self.files,
                "summary": summary}
        write_json(self.out / "metadata.json", meta)


def _thin_idx(n_t: int, thin: int) -> np.ndarray:
    idx = np.arange(0, n_t, thin)
    if idx[-1] != n_t - 1:
        idx = np.append(idx, n_t - 1)
    return idx


def _surface_rows(t, x, idx, *surfaces):
    surfaces = [np.broadcast_to(s[:, None], (len(t), len(x))) if np.ndim(s) == 1 else s for s in surfaces]
    for i in idx:
        for j, xj in enumerate(x):
            yield (t[i], xj, *(s[i, j] for s in surfaces))


# --- commands -----------------------------------------------------------------------------


def cmd_check(run: Run) -> tuple[int, dict]:
    s = run.cfg.solver
    rep = check_assumptions(run.coeffs, n_steps=run.cfg.n_steps, blowup_cap=s.blowup_cap,
                            riccati_literal=s.riccati_literal)
    report = {"assumptions": rep.to_dict(), "modes": [], "status": rep.status}
    if not rep.well_posed:
        return EXIT_MODEL, report
    from .riccati import solve_eta

    gm = assemble_gamma(run.coeffs, s.gamma_z2_literal)
    eta = solve_eta(gm, run.coeffs.T, n_steps=run.cfg.n_steps, literal=s.riccati_literal,
                    blowup_cap=s.blowup_cap)
    sg = decompose(run.kernel, run.cfg.graphon.K_modes, run.cfg.graphon.grid_size)
    report["truncation_residual"] = sg.truncation_residual
    code = EXIT_OK
    for k, lam in enumerate(sg.eigenvalues, start=1):
        try:
            mr = check_mode_wellposedness(gm, eta, float(lam), s.riccati_literal)
            report["modes"].append({"k": k, **mr.to_dict()})
        except ModeIllPosedError as exc:
            report["modes"].append({"k": k, "error": str(exc), **exc.diagnostics})
            report["status"] = "ill-posed"
            code = EXIT_MODEL
    return code, report


def _oracle_compare(run: Run, sol):
    s = run.cfg.solver
    orc = fixed_point_oracle(run.coeffs, sol.gm, sol.eta, run.kernel, M=s.M_x, tol=s.oracle_tol,
                             max_iter=s.oracle_max_iter)
    diff = np.abs(sol.Zhat.values - orc.Zhat.values)
    disc = float(diff.max())
    bound = max(s.oracle_bound, 10.0 * sol.sg.truncation_residual)
    idx = _thin_idx(len(sol.t), run.cfg.output.thin)
    run.csv("oracle", ["t", "x", "Zhat_spectral", "Zhat_oracle", "abs_diff"],
            _surface_rows(sol.t, sol.x, idx, sol.Zhat.values, orc.Zhat.values, diff))
    return {"oracle_discrepancy": disc, "oracle_bound": bound, "oracle_iterations": orc.iterations,
            "oracle_method": orc.method}


def cmd_solve(run: Run) -> tuple[int, dict]:
    sol = run.solve()
    idx = _thin_idx(len(sol.t), run.cfg.output.thin)
    t = sol.t
    run.csv("surfaces", ["t", "x", "Zhat", "zeta", "mean", "var"],
            _surface_rows(t, sol.x, idx, sol.Zhat.values, sol.zeta.values, sol.mean.values, sol.var.values))
    tr = sol.traj
    run.csv("modes", ["t", "k", "lambda", "pi", "z", "v"],
            ((t[i], k + 1, sol.modes[k].lam, sol.modes[k].path.values[i], tr.z.values[i, k], tr.v.values[i, k])
             for i in idx for k in range(tr.n_modes)))
    run.csv("riccati", ["t", "eta"] + [f"pi_{k + 1}" for k in range(len(sol.modes))],
            ((t[i], sol.eta.values[i], *(m.path.values[i] for m in sol.modes)) for i in idx))
    d = sol.diagnostics
    summary = {"modes": d["n_modes"], "truncation_residual": d["truncation_residual"],
               "max_mode_discrepancy": d["max_mode_discrepancy"], "methods": d["methods"]}
    if run.oracle:
        summary.update(_oracle_compare(run, sol))
    line = f"modes={summary['modes']} truncation_residual={summary['truncation_residual']:.3e}"
    if run.oracle:
        line += f" oracle_discrepancy={summary['oracle_discrepancy']:.3e}"
    print(line)
    if run.oracle:
        summary["oracle_within_bound"] = summary["oracle_discrepancy"] <= summary["oracle_bound"]
        if not summary["oracle_within_bound"]:
            print(f"warning: oracle discrepancy exceeds {summary['oracle_bound']:.3e}; "
                  "consider more modes", file=sys.stderr)
    return EXIT_OK, summary


def cmd_oracle(run: Run) -> tuple[int, dict]:
    run.oracle = True
    sol = run.solve()
    summary = _oracle_compare(run, sol)
    summary["truncation_residual"] = sol.sg.truncation_residual
    print(f"oracle_discrepancy={summary['oracle_discrepancy']:.3e} bound={summary['oracle_bound']:.3e} "
          f"iterations={summary['oracle_iterations']}")
    if summary["oracle_discrepancy"] > summary["oracle_bound"]:
        raise OracleFailure("oracle discrepancy exceeds bound", summary)
    return EXIT_OK, summary


def cmd_simulate(run: Run) -> tuple[int, dict]:
    cfg = run.cfg
    sim = cfg.simulation
    sol = run.solve()
    n_idx = sim.n_indices or cfg.solver.M_x
    x = midpoint_grid(n_idx)
    sc = SimConfig(sim.n_paths, cfg.sim_n_steps(cfg.n_steps), sim.seed, hist_times=tuple(sim.hist_times))
    ens = simulate_graphon_policy(sol, x, sc)
    Zp, _ = sol.paths_at(x)
    m_model = sol.mean.at(ens.t) if len(ens.t) != len(sol.t) else sol.mean.values
    # model moments at the simulated indices
    if n_idx != cfg.solver.M_x:
        m_model = sol.interp_index(m_model, x)
    Z = Zp.at(ens.t) if len(ens.t) != len(sol.t) else Zp.values
    idx = _thin_idx(len(ens.t), cfg.output.thin)
    run.csv("simulation", ["t", "x", "mean", "var", "se", "mean_model", "Zhat"],
            _surface_rows(ens.t, x, idx, ens.mean, ens.var, ens.se(), m_model, Z))
    run.csv("histogram", ["t", "bin_left", "bin_right", "mass"], occupation_histogram(ens, sim.hist_bins))
    summary = {"n_paths": sim.n_paths, "n_indices": n_idx, "n_steps": len(ens.t) - 1,
               "pooled_mean_T": float(ens.mean[-1].mean()),
               "max_abs_mean_error": float(np.max(np.abs(ens.mean - m_model)))}
    print(f"paths={sim.n_paths} indices={n_idx} pooled_mean_T={summary['pooled_mean_T']:.6f}")
    return EXIT_OK, summary


def cmd_nplayer(run: Run) -> tuple[int, dict]:
    cfg = run.cfg
    N = cfg.simulation.N
    game = sample_game(run.kernel, run.coeffs, N, cfg.simulation.seed)
    nash = solve_nash(game, n_steps=cfg.finite_n_steps, blowup_cap=cfg.solver.blowup_cap,
                      max_N=cfg.solver.max_N)
    J, BR, gap = nash_gaps(game, nash.policy)
    sol = run.solve(cfg.finite_n_steps)
    gr = eps_nash_gap(game, sol)
    run.csv("nplayer", ["k", "x_k", "J_nash", "best_nash", "gap_nash", "J_graphon", "best_graphon", "gap_graphon"],
            ((k, game.indices[k], J[k], BR[k], gap[k], gr.J[k], gr.best[k], gr.gaps[k]) for k in range(N)))
    scale = float(np.max(np.abs(J))) or 1.0
    summary = {"N": N, "nash_max_gap": float(np.max(np.abs(gap))), "nash_relative_gap": float(np.max(np.abs(gap)) / scale),
               "graphon_max_gap": gr.max_gap}
    print(f"N={N} nash_relative_gap={summary['nash_relative_gap']:.3e} graphon_gap={gr.max_gap:.6e}")
    return EXIT_OK, summary


def cmd_converge(run: Run) -> tuple[int, dict]:
    cfg = run.cfg
    sim = cfg.simulation
    n_fin = cfg.finite_n_steps
    sol = run.solve(n_fin)
    sc = SimConfig(sim.n_paths, cfg.sim_n_steps(n_fin), sim.seed)
    rep = convergence_sweep(run.kernel, run.coeffs, sim.N_list, sc, cfg.graphon.K_modes, n_steps=n_fin,
                            eps_max_N=sim.eps_max_N, elln_x=sim.elln_x, sol=sol, mapper=run.mapper)
    run.csv("convergence", ["N", "delta_hat", "delta_se", "eps_gap", "elln_var", "ratio_loglog"],
            ((r.N, r.delta_hat, r.delta_se, r.eps_gap, r.elln_var, r.ratio_loglog) for r in rep.records))
    summary = rep.to_dict()
    write_json(run.out / "convergence.json", summary)
    run.files.append("convergence.json")
    slope = "skipped" if rep.slope is None else f"{rep.slope:.4f}"
    print(f"N={[int(n) for n in rep.N]} slope={slope}")
    return EXIT_OK, summary


HANDLERS = {"check": cmd_check, "solve": cmd_solve, "simulate": cmd_simulate, "nplayer": cmd_nplayer,
            "converge": cmd_converge, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphon-lq", description="Linear-quadratic graphon games.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, help="worker threads (fallback: GRAPHON_LQ_THREADS, else 1)")
    p.add_argument("--oracle", action="store_true", help="cross-check the spectral solution on the index grid")
    p.add_argument("--seed", type=int, help="override simulation.seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg.simulation.seed = args.seed
        out = Path(args.out or cfg.output.directory)
        run = Run(args.command, cfg, out, thread_count(args.threads), args.oracle)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, summary = HANDLERS[args.command](run)
    except GraphonLQError as exc:
        code = exit_code_for(exc)
        diag = getattr(exc, "diagnostics", None)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        if diag:
            print(to_json(diag), file=sys.stderr)
        return code
    if args.command == "check":
        print(to_json(summary))
        if args.out:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "check.json", summary)
        return code
    run.finish(summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
