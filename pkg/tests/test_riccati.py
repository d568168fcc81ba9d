import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from graphon_lq.errors import ModeIllPosedError, WellPosednessError
from graphon_lq.graphon import decompose
from graphon_lq.model import GameCoefficients, assemble_gamma
from graphon_lq.riccati import scalar_lq_value, solve_all_modes, solve_eta, solve_pi


def _ivp(rhs, T, yT, t_eval):
    sol = solve_ivp(rhs, (T, 0.0), np.atleast_1d(yT), rtol=1e-12, atol=1e-14, dense_output=True, method="DOP853")
    return sol.sol(t_eval)


def test_eta_terminal_and_rest_point(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    assert eta.values[-1] == 1.0
    ref = _ivp(lambda t, y: y * y + 2 * y - 1, 3.0, 1.0, eta.grid.t)[0]
    assert np.max(np.abs(eta.values - ref)) < 1e-11
    # backward flow approaches the stable rest point sqrt(2) - 1
    assert eta.values[0] == pytest.approx(math.sqrt(2) - 1, abs=2e-4)
    assert eta.values[0] > math.sqrt(2) - 1
    assert eta.error_estimate < 1e-10


def test_eta_literal_form(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000, literal=True)
    ref = _ivp(lambda t, y: y * y + 3 * y - 1, 3.0, 1.0, eta.grid.t)[0]
    assert np.max(np.abs(eta.values - ref)) < 1e-11
    rest = (-3 + math.sqrt(13)) / 2
    assert rest == pytest.approx(0.302776, abs=5e-7)
    assert eta.values[0] > rest and eta.values[0] - rest < 1e-3


def test_eta_rk4_method_agrees(gm_bench):
    a = solve_eta(gm_bench, 3.0, n_steps=2000)
    b = solve_eta(gm_bench, 3.0, n_steps=2000, method="rk4")
    assert b.method == "rk4"
    assert np.max(np.abs(a.values - b.values)) < 1e-10
    assert b.error_estimate is not None and b.error_estimate < 1e-9


def test_eta_trivial_cases():
    # G12 = G21 = 0 and G11 = G22 = 0: constant
    co = GameCoefficients(0.0, 0.0, 0.0, [[0, 0, 0], [0, 1, 0], [0, 0, 0]], [[0.7, 0], [0, 0]], 2.0)
    eta = solve_eta(assemble_gamma(co), 2.0, n_steps=100)
    assert np.all(eta.values == 0.7)
    # zero terminal and zero forcing: identically zero
    co = GameCoefficients(-1.0, 1.0, 0.0, [[0, 0, 0], [0, 1, 0], [0, 0, 0]], [[0, 0], [0, 0]], 2.0)
    eta = solve_eta(assemble_gamma(co), 2.0, n_steps=100)
    assert np.all(eta.values == 0.0)


def test_eta_blowup_reports_escape_time():
    co = GameCoefficients(0.0, 1.0, 0.0, [[-1, 0, 0], [0, 1, 0], [0, 0, 0]], [[0, 0], [0, 0]], 5.0)
    for method in ("closed_form", "rk4"):
        with pytest.raises(WellPosednessError) as info:
            solve_eta(assemble_gamma(co), 5.0, n_steps=2000, method=method)
        assert info.value.escape_time == pytest.approx(5 - math.pi / 2, abs=1e-2)


def test_pi_closed_form_benchmark(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    m = solve_pi(gm_bench, eta, 1.0)
    assert m.method == "closed_form"
    assert m.values[-1] == -1.0
    assert m.discrepancy < 1e-8
    # independent oracle: coupled (eta, pi) system with scipy
    def rhs(t, y):
        e, p = y
        B = e + 0.5 * (2 - 1)  # -G12 eta - (G11 - G22 + Gz1) / 2
        A = 1 - e
        return [e * e + 2 * e - 1, p * p + 2 * B * p + A]
    ref = _ivp(rhs, 3.0, [1.0, -1.0], eta.grid.t)[1]
    assert np.max(np.abs(m.values - ref)) < 1e-10
    assert m.residual() < 1e-4
    assert m.d_two_way() < 1e-12


def test_pi_literal_uses_rk4(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000, literal=True)
    m = solve_pi(gm_bench, eta, 1.0)
    assert m.method == "rk4" and m.values[-1] == -1.0
    assert m.D == pytest.approx(2.25) and m.F == pytest.approx(-2.0)


def test_pi_zero_eigenvalue_linear(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    m = solve_pi(gm_bench, eta, 0.0)
    assert m.method == "linear_ode"
    assert m.values[-1] == -1.0
    assert m.discrepancy < 1e-10
    def rhs(t, y):
        e, p = y
        return [e * e + 2 * e - 1, 2 * (e + 1) * p + (1 - e)]
    ref = _ivp(rhs, 3.0, [1.0, -1.0], eta.grid.t)[1]
    assert np.max(np.abs(m.values - ref)) < 1e-10


def test_pi_zero_forcing_is_zero():
    co = GameCoefficients(-1.0, 1.0, 0.0, [[1, 0, 0], [0, 1, 0], [0, 0, 0]], [[1, 0], [0, 0]], 3.0)
    gm = assemble_gamma(co)
    eta = solve_eta(gm, 3.0, n_steps=300)
    for lam in (0.0, 0.4, 1.0):
        assert np.max(np.abs(solve_pi(gm, eta, lam).values)) < 1e-14


def test_pi_ill_posed_mode(bench):
    gm = assemble_gamma(bench.replace(C_h=[[1, -10], [-10, 1]]))
    eta = solve_eta(gm, 3.0, n_steps=600)
    with pytest.raises(ModeIllPosedError):
        solve_pi(gm, eta, 1.0)


def test_pi_sensitivity_to_terminal_value(gm_bench):
    # two nearby terminal values give distinct backward solutions
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    def rhs(t, y, lam=1.0):
        e, p = y
        return [e * e + 2 * e - 1, lam * p * p + 2 * (e + 0.5 * (2 - lam)) * p + (1 - e)]
    t = eta.grid.t
    a = _ivp(rhs, 3.0, [1.0, -1.0], t)[1]
    b = _ivp(rhs, 3.0, [1.0, -1.0 + 1e-6], t)[1]
    assert np.all(np.abs(a - b)[:-1] > 0)
    assert np.max(np.abs(a - b)) < 1e-4


def test_all_modes_min_max_cross_check(gm_bench):
    eta = solve_eta(gm_bench, 3.0, n_steps=2000)
    sg = decompose(__import__("graphon_lq.graphon", fromlist=["MinMax"]).MinMax(), 40)
    modes = solve_all_modes(gm_bench, eta, sg.eigenvalues)
    assert all(m.method == "closed_form" for m in modes)
    assert max(m.discrepancy for m in modes) < 1e-8
    assert all(m.values[-1] == -1.0 for m in modes)


def test_scalar_lq_value_against_closed_form():
    # a = 0, b = 1, q = 0, r = 1, qT = 1: P = 1 / (1 + T - t)
    T = 2.0
    val = scalar_lq_value(0.0, 1.0, 0.0, 1.0, 1.0, T, 1.5, 0.3)
    P0 = 1 / (1 + T)
    c0 = 0.5 * math.log(1 + T)
    assert val == pytest.approx(0.5 * P0 * (1.5 ** 2 + 0.3) + c0, rel=1e-10)
