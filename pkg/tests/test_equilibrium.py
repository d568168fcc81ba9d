import numpy as np
import pytest
from scipy import integrate

from graphon_lq.equilibrium import (cell_weights, fixed_point_oracle, project_initial, solve_equilibrium,
                                    solve_modes)
from graphon_lq.errors import NumericalError
from graphon_lq.graphon import Constant, GridKernel, MinMax, PowerLaw, decompose, midpoint_grid
from graphon_lq.model import GameCoefficients, assemble_gamma
from graphon_lq.riccati import solve_all_modes, solve_eta

from conftest import decoupled_coeffs, sup


def test_project_initial_constant():
    assert project_initial(decompose(Constant(1.0), 1), 8.0)[0] == 8.0


def test_project_initial_min_max():
    sg = decompose(MinMax(), 6)
    x = project_initial(sg, 8.0)
    for k in range(1, 7):
        ref, _ = integrate.quad(lambda y: 8 * np.sqrt(2) * np.sin(np.pi * k * y), 0, 1)
        assert x[k - 1] == pytest.approx(ref, abs=1e-12)
        if k % 2:
            assert x[k - 1] == pytest.approx(8 * 2 * np.sqrt(2) / (np.pi * k), rel=1e-14)
        else:
            assert abs(x[k - 1]) < 1e-14


def test_project_initial_power_law_orthonormal():
    sg = decompose(PowerLaw(-0.4), 1)
    x1 = project_initial(sg, 8.0)[0]
    ref, _ = integrate.quad(lambda y: 8 * float(sg.eigenfunctions([y])[0, 0]), 0, 1)
    assert x1 == pytest.approx(ref, rel=1e-10)
    assert x1 == pytest.approx(7.6665, abs=5e-5)


def test_power_law_initial_aggregate(bench):
    # Zhat_0(x) = int w(x, y) m0 dy = 8 x^0.4 / 1.4, independent of the eigenfunction scaling
    sol = solve_equilibrium(bench, PowerLaw(-0.4), 1, n_steps=600)
    assert np.max(np.abs(sol.Zhat.values[0] - 8 * sol.x ** 0.4 / 1.4)) < 1e-12


def test_modes_constant_benchmark(bench, gm_bench):
    sg = decompose(Constant(1.0), 1)
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    modes = solve_all_modes(gm_bench, eta, sg.eigenvalues)
    tr = solve_modes(gm_bench, eta, modes, project_initial(sg, 8.0))
    assert tr.z.values[0, 0] == 8.0
    assert tr.v.values[-1, 0] == -tr.z.values[-1, 0]
    assert np.max(np.abs(tr.v.values - tr.pi * tr.z.values)) == 0.0
    assert tr.fb_residual < 1e-9


def test_modes_zero_initial_data(gm_bench):
    sg = decompose(MinMax(), 4)
    eta = solve_eta(gm_bench, 3.0, n_steps=600)
    modes = solve_all_modes(gm_bench, eta, sg.eigenvalues)
    tr = solve_modes(gm_bench, eta, modes, np.zeros(4))
    assert np.all(tr.z.values == 0) and np.all(tr.v.values == 0)
    tr = solve_modes(gm_bench, eta, solve_all_modes(gm_bench, eta, [0.0]), [5.0])
    assert np.all(tr.z.values == 0)


def test_constant_graphon_is_mean_field(bench):
    sol = solve_equilibrium(bench, Constant(1.0), 1)
    Z = sol.Zhat.values
    assert np.max(Z.max(axis=1) - Z.min(axis=1)) == 0.0
    # Zhat equals the mean state of every player
    assert np.max(np.abs(Z - sol.mean.values)) < 1e-9
    assert np.max(np.abs(Z - 8.0)) < 1e-9


def test_terminal_conditions_exact(bench):
    sol = solve_equilibrium(bench, MinMax(), 10, n_steps=600)
    g = sol.gm.gt2
    assert np.array_equal(sol.zeta.values[-1], g * sol.Zhat.values[-1])
    assert np.array_equal(sol.traj.v.values[-1], g * sol.traj.z.values[-1])
    assert np.all(sol.mean.values[0] == 8.0)
    assert sol.var.values[0] == 0.25


def test_variance_ode(bench):
    sol = solve_equilibrium(bench, Constant(1.0), 1)
    es = integrate.solve_ivp(lambda t, y: y * y + 2 * y - 1, (3, 0), [1.0], rtol=1e-12, atol=1e-14,
                             dense_output=True)
    ref = integrate.solve_ivp(lambda t, v: 2 * (-1 - es.sol(t)[0]) * v + 1, (0, 3), [0.25], rtol=1e-12,
                              atol=1e-14, dense_output=True).sol(sol.t)[0]
    assert np.max(np.abs(sol.var.values - ref)) < 1e-9


def test_costate_and_operator_consistency(bench):
    for kernel, K in ((Constant(1.0), 1), (PowerLaw(-0.4), 1), (MinMax(), 40)):
        sol = solve_equilibrium(bench, kernel, K, n_steps=2000, x=midpoint_grid(200))
        assert sol.costate_residual() < 1e-5
        assert sol.diagnostics["mode_fb_residual"] < 1e-8
    sol = solve_equilibrium(bench, Constant(1.0), 1)
    assert sol.operator_consistency() < 1e-9


def test_zeta_expansion_matches_backward_solve(bench):
    sol = solve_equilibrium(bench, PowerLaw(-0.4), 1)
    assert sol.diagnostics["zeta_expansion_gap"] < 1e-9


def test_decoupled_game_has_zero_offset():
    co = decoupled_coeffs()
    sol = solve_equilibrium(co, MinMax(), 8, n_steps=600)
    assert np.all(sol.zeta.values == 0.0)


def test_min_max_aggregate_decays_and_is_ordered(bench):
    sol = solve_equilibrium(bench, MinMax(), 40, x=midpoint_grid(200))
    Z0, ZT = sol.Zhat.values[0], sol.Zhat.values[-1]
    assert np.all(np.abs(ZT) <= 0.2 * np.abs(Z0) + 1e-12)
    # symmetric in x -> 1 - x and larger near the centre
    assert np.allclose(Z0, Z0[::-1], atol=1e-12)
    half = Z0[:100]
    assert np.all(np.diff(half) > 0)


def test_feedback_terminal_and_trivial(bench):
    sol = solve_equilibrium(bench, MinMax(), 10, n_steps=600, x=midpoint_grid(50))
    x = sol.x[7]
    for s in (-1.0, 0.0, 3.5):
        # C12 = C23 = 0, eta_T = 1 and zeta_T = -Zhat_T
        expected = -s * 1.0 - sol.zeta.values[-1, 7]
        assert sol.feedback_control(x, 3.0, s) == pytest.approx(expected, abs=1e-14)
        assert sol.feedback_control(x, 3.0, s) == pytest.approx(sol.Zhat.values[-1, 7] - s, abs=1e-14)
    zc = decoupled_coeffs(m0=0.0)
    sol0 = solve_equilibrium(zc, MinMax(), 4, n_steps=300)
    assert sol0.feedback_control(0.3, 1.0, 0.0) == 0.0


def test_feedback_without_control_loading(bench):
    co = bench.replace(b=0.0, C_f=[[1, 0.2, -1], [0.2, 2, 0.5], [-1, 0.5, 1]])
    sol = solve_equilibrium(co, Constant(1.0), 1, n_steps=300)
    Z = sol.Zhat.values[100, 0]
    t = sol.t[100]
    assert sol.feedback_control(0.5, t, 1.7) == pytest.approx((-0.2 * 1.7 - 0.5 * Z) / 2, rel=1e-13)


def test_truncation_bound_enforced(bench):
    sol = solve_equilibrium(bench, MinMax(), 40, n_steps=300, max_truncation_residual=1e-6)
    assert sol.sg.truncation_residual < 1e-6
    with pytest.raises(NumericalError):
        solve_equilibrium(bench, MinMax(), 40, n_steps=300, max_truncation_residual=1e-9)


def test_oracle_trivial_fixed_point():
    co = decoupled_coeffs(m0=0.0)
    co = co.replace(C_h=[[1, 0], [0, 0]])
    gm = assemble_gamma(co)
    eta = solve_eta(gm, 3.0, n_steps=300)
    res = fixed_point_oracle(co, gm, eta, MinMax(), M=40)
    assert res.iterations <= 1
    assert np.all(res.Zhat.values == 0.0)


def test_oracle_matches_spectral_constant(bench, gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=600)
    res = fixed_point_oracle(bench, gm_bench, eta, Constant(1.0), M=40)
    sol = solve_equilibrium(bench, Constant(1.0), 1, n_steps=600, x=midpoint_grid(40))
    assert sup(res.Zhat.values - sol.Zhat.values) < 1e-6


def test_oracle_plain_picard_agrees_with_accelerated(bench, gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=300)
    a = fixed_point_oracle(bench, gm_bench, eta, PowerLaw(-0.4), M=30)
    b = fixed_point_oracle(bench, gm_bench, eta, PowerLaw(-0.4), M=30, accelerate=False)
    assert b.method == "picard"
    assert sup(a.Zhat.values - b.Zhat.values) < 1e-7
    assert a.iterations <= b.iterations


def test_cell_weights_rows():
    W = cell_weights(Constant(1.0), 10)
    assert np.allclose(W.sum(axis=1), 1.0)
    # MinMax row sums approximate x (1 - x) / 2
    x = midpoint_grid(50)
    W = cell_weights(MinMax(), 50)
    assert np.max(np.abs(W.sum(axis=1) - x * (1 - x) / 2)) < 1e-4


def test_grid_kernel_pipeline(bench):
    gk = GridKernel.from_kernel(MinMax(), 100)
    sol = solve_equilibrium(bench, gk, 10, grid_size=100, n_steps=300)
    ref = solve_equilibrium(bench, MinMax(), 10, n_steps=300, x=sol.x)
    assert sup(sol.Zhat.values - ref.Zhat.values) < 5e-3
