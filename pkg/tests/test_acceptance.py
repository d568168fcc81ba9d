"""Acceptance criteria 1-9; each test prints one PASS/FAIL line.

Run alone with ``pytest -s tests/test_acceptance.py`` to see the lines inline.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from graphon_lq.cli import main
from graphon_lq.equilibrium import fixed_point_oracle, solve_equilibrium
from graphon_lq.finite_game import nash_gaps, sample_game, solve_nash
from graphon_lq.graphon import Constant, MinMax, PowerLaw, decompose, midpoint_grid
from graphon_lq.model import GameCoefficients, assemble_gamma
from graphon_lq.monte_carlo import SimConfig, convergence_sweep, elln_check, eps_nash_gap, simulate_graphon_policy
from graphon_lq.riccati import solve_all_modes, solve_eta, solve_pi

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
T, N_STEPS, M = 3.0, 2000, 200
EX = GameCoefficients.benchmark()
GM = assemble_gamma(EX)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def sup(a):
    return float(np.max(np.abs(a)))


def test_criterion_1_riccati_cross_validation(capsys):
    t0 = time.perf_counter()
    eta = solve_eta(GM, T, n_steps=N_STEPS)
    worst = 0.0
    for kernel, K in ((Constant(1.0), 1), (PowerLaw(-0.4), 1), (MinMax(), 40)):
        modes = solve_all_modes(GM, eta, decompose(kernel, K, M).eigenvalues)
        assert all(m.method == "closed_form" and m.discrepancy is not None for m in modes)
        worst = max(worst, max(m.discrepancy for m in modes))
    elapsed = time.perf_counter() - t0
    lit = solve_pi(GM, solve_eta(GM, T, n_steps=N_STEPS, literal=True), 1.0)
    consts = abs(lit.D - 2.25) < 1e-12 and abs(lit.F + 2.0) < 1e-12
    ok = worst <= 1e-8 and elapsed < 1.0 and consts
    report(capsys, 1, ok, f"closed form vs RK4 sup={worst:.2e} (<=1e-8), {elapsed:.2f}s (<1s), "
                          f"literal D={lit.D:g} F={lit.F:g}")


def test_criterion_2_spectral_vs_oracle(capsys):
    t0 = time.perf_counter()
    eta = solve_eta(GM, T, n_steps=N_STEPS)
    x = midpoint_grid(M)
    parts, ok = [], True
    for name, kernel, K in (("constant", Constant(1.0), 1), ("power_law", PowerLaw(-0.4), 1),
                            ("min_max", MinMax(), 100)):
        sol = solve_equilibrium(EX, kernel, K, n_steps=N_STEPS, x=x)
        orc = fixed_point_oracle(EX, GM, eta, kernel, M=M)
        d = sup(sol.Zhat.values - orc.Zhat.values)
        bound = 1e-4 if K == 1 else max(1e-4, 10 * sol.sg.truncation_residual)
        ok &= d <= bound
        parts.append(f"{name}={d:.2e}/{bound:.1e}")
        if name == "min_max":
            s40 = solve_equilibrium(EX, kernel, 40, n_steps=N_STEPS, x=x)
            parts.append(f"(min_max K=40: {sup(s40.Zhat.values - orc.Zhat.values):.2e}, "
                         f"residual {s40.sg.truncation_residual:.1e})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    report(capsys, 2, ok, " ".join(parts) + f", {elapsed:.1f}s (<30s)")


def test_criterion_3_mean_field_degeneration(capsys):
    eta = solve_eta(GM, T, n_steps=N_STEPS)
    spreads, oracle = [], []
    for K in (0.25, 0.5, 1.0):
        sol = solve_equilibrium(EX, Constant(K), 1, n_steps=N_STEPS, x=midpoint_grid(M))
        Z = sol.Zhat.values
        spreads.append(float(np.max(Z.max(axis=1) - Z.min(axis=1))))
        orc = fixed_point_oracle(EX, GM, eta, Constant(K), M=M)
        oracle.append(sup(orc.Zhat.values - Z))
    ok = max(spreads) <= 1e-8 and max(oracle) <= 1e-4
    report(capsys, 3, ok, f"max spread={max(spreads):.1e} (<=1e-8), oracle={max(oracle):.2e} (<=1e-4)")


def test_criterion_4_aggregate_behaviour(capsys):
    t0 = time.perf_counter()
    x = midpoint_grid(M)
    cfg = SimConfig(n_paths=10_000, n_steps=400, seed=0)
    sol_c = solve_equilibrium(EX, Constant(1.0), 1, n_steps=N_STEPS, x=x)
    ens_c = simulate_graphon_policy(sol_c, x, cfg)
    pooled = float(ens_c.mean[-1].mean())
    ok_a = abs(pooled - 8) <= 0.5
    decay = {}
    for name, kernel, K in (("min_max", MinMax(), 40), ("power_law", PowerLaw(-0.4), 1)):
        sol = solve_equilibrium(EX, kernel, K, n_steps=N_STEPS, x=x)
        Z0, Z3 = sol.Zhat.values[0], sol.Zhat.values[-1]
        mask = Z0 > 0.1
        decay[name] = float(np.max(Z3[mask] / Z0[mask]))
        if name == "power_law":
            ens = simulate_graphon_policy(sol, x, cfg)
    ok_b = all(v <= 0.2 for v in decay.values())
    m, se = ens.mean[-1], ens.se()[-1]
    step = np.diff(m)
    direction = np.sign(m[-1] - m[0])
    viol = int(np.sum(direction * step < -3 * np.hypot(se[1:], se[:-1])))
    ok_c = viol == 0 and direction != 0
    elapsed = time.perf_counter() - t0
    ok = ok_a and ok_b and ok_c and elapsed < 120
    report(capsys, 4, ok, f"(a) constant mean_T={pooled:.3f}; (b) max Z3/Z0 min_max={decay['min_max']:.3f} "
                          f"power_law={decay['power_law']:.3f}; (c) power_law ordering violations={viol} "
                          f"(mean_T {m[0]:.3f}..{m[-1]:.3f}); {elapsed:.1f}s (<120s)")


def test_criterion_5_finite_nash_self_test(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for kernel in (Constant(1.0), MinMax()):
        for N in (2, 4, 8):
            game = sample_game(kernel, EX, N, seed=0)
            J, _, gap = nash_gaps(game, solve_nash(game, n_steps=600).policy)
            worst = max(worst, float(np.max(np.abs(gap)) / np.max(np.abs(J))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60
    report(capsys, 5, ok, f"max relative gap={worst:.2e} (<=1e-6), {elapsed:.1f}s (<60s)")


def _inversions(v):
    return int(np.sum(np.diff(v) >= 0))


def test_criterion_6_propagation_of_chaos(capsys):
    t0 = time.perf_counter()
    N_list = [8, 16, 32, 64, 128]
    cfg = SimConfig(n_paths=10_000, n_steps=400, seed=0)
    kw = dict(n_steps=600, eps=False, elln_x=None)
    rc = convergence_sweep(Constant(1.0), EX, N_list, cfg, 1, **kw)
    t1 = time.perf_counter()
    rm = convergence_sweep(MinMax(), EX, N_list, cfg, 40, **kw)
    t2 = time.perf_counter()
    ratio = np.array([r.ratio_loglog for r in rm.records])
    ok_c = _inversions(rc.delta) <= 1 and -1.3 <= rc.slope <= -0.7
    ok_m = bool(np.all(ratio <= 4 * ratio[0]))
    elapsed = t2 - t0
    ok = ok_c and ok_m and elapsed < 1200
    report(capsys, 6, ok, f"constant delta={np.array2string(rc.delta, precision=4)} slope={rc.slope:.3f} "
                          f"(in [-1.3,-0.7]); min_max ratio={np.array2string(ratio, precision=3)} "
                          f"(<=4x first), min_max {t2 - t1:.0f}s, total {elapsed:.0f}s (<1200s)")


def test_criterion_7_eps_nash(capsys):
    t0 = time.perf_counter()
    N_list = [4, 8, 16, 32, 64]
    parts, ok = [], True
    for name, kernel, K in (("constant", Constant(1.0), 1), ("min_max", MinMax(), 40)):
        sol = solve_equilibrium(EX, kernel, K, n_steps=600)
        g = np.array([eps_nash_gap(sample_game(kernel, EX, N, seed=0), sol).max_gap for N in N_list])
        ok &= _inversions(g) <= 1 and g[-1] <= 0.25 * g[0]
        parts.append(f"{name} gaps={np.array2string(g, precision=4)} ratio={g[-1] / g[0]:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    report(capsys, 7, ok, "; ".join(parts) + f" (<=0.25), {elapsed:.1f}s (<600s)")


def test_criterion_8_elln(capsys):
    t0 = time.perf_counter()
    sol = solve_equilibrium(EX, Constant(1.0), 1, n_steps=N_STEPS)
    res = elln_check(sol, Constant(1.0), [16, 32, 64, 128, 256, 512], SimConfig(n_paths=4000, n_steps=400))
    elapsed = time.perf_counter() - t0
    ok = res.slope is not None and abs(res.slope + 1) <= 0.15 and elapsed < 60
    report(capsys, 8, ok, f"slope={res.slope:.3f} (-1 +/- 0.15), {elapsed:.1f}s (<60s)")


def test_criterion_9_determinism(capsys, tmp_path):
    cfg = json.loads((CONFIGS / "min_max.json").read_text())
    cfg["graphon"]["K_modes"] = 100
    cfg["solver"].update(dt=0.0075, M_x=50)
    cfg["simulation"].update(n_paths=500, dt_sim=0.0075, N=4, N_list=[4, 8], eps_max_N=8)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    diffs, n_files = [], 0
    for cmd in ("solve", "oracle", "simulate", "nplayer", "converge"):
        outs = []
        for rep in range(2):
            d = tmp_path / f"{cmd}{rep}"
            code = main([cmd, "--config", str(path), "--out", str(d), "--threads", str(1 + rep)])
            assert code == 0, (cmd, code)
            outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
        n_files += len(outs[0])
        if not outs[0] or outs[0] != outs[1]:
            diffs.append(cmd)
    check = [main(["check", "--config", str(path)]) for _ in range(2)]
    ok = not diffs and check == [0, 0]
    report(capsys, 9, ok, f"{n_files} CSVs over 5 commands byte-identical on rerun; differing: {diffs or 'none'}")
