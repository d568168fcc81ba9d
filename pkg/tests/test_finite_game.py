import numpy as np
import pytest
from scipy.integrate import solve_ivp

from graphon_lq.errors import FiniteGameIllPosedError
from graphon_lq.finite_game import (LinearPolicy, best_response_value, cost_evaluate, cost_evaluate_mc,
                                    fbsde_residual, nash_gaps, sample_game, sample_indices, solve_nash)
from graphon_lq.graphon import Constant, MinMax, PowerLaw, evaluate
from graphon_lq.integrate import GridPath, TimeGrid
from graphon_lq.model import GameCoefficients, assemble_gamma
from graphon_lq.riccati import solve_eta

from conftest import decoupled_coeffs


def scalar_value(a, b, q, cross, r, qT, T, m0, v0):
    """Optimal cost of the scalar LQ problem, by scipy."""
    def rhs(t, y):
        P = y[0]
        return [-(2 * a * P + q - (b * P + cross) ** 2 / r), -0.5 * P]
    y = solve_ivp(rhs, (T, 0), [qT, 0.0], rtol=1e-12, atol=1e-13).y[:, -1]
    return 0.5 * y[0] * (m0 * m0 + v0) + y[1]


def zero_policy(N, n_steps, T):
    g = TimeGrid(T, n_steps)
    return LinearPolicy(GridPath(g, np.zeros((n_steps + 1, N, N)), np.zeros((n_steps + 1, N, N))),
                        GridPath(g, np.zeros((n_steps + 1, N)), np.zeros((n_steps + 1, N))))


def test_sample_game_basics(bench):
    g = sample_game(Constant(1.0), bench, 1)
    assert g.W.tolist() == [[1.0]]
    a = sample_game(MinMax(), bench, 8, seed=5)
    b = sample_game(MinMax(), bench, 16, seed=5)
    assert np.array_equal(a.indices, b.indices[:8])
    assert np.array_equal(a.W, b.W[:8, :8])
    for i in range(8):
        for j in range(8):
            assert a.W[i, j] == evaluate(MinMax(), a.indices[i], a.indices[j])
    assert np.array_equal(sample_indices(5, 3), np.random.default_rng(5).random(3))
    assert a.to_dict()["seed"] == 5


def test_one_player_self_interaction():
    Cf = np.array([[2.0, 0.3, -0.5], [0.3, 1.5, 0.2], [-0.5, 0.2, 0.7]])
    Ch = np.array([[1.0, -0.4], [-0.4, 0.6]])
    co = GameCoefficients(-0.5, 0.8, 0.4, Cf, Ch, 2.0, 1.5, 0.3)
    game = sample_game(Constant(1.0), co, 1)
    nash = solve_nash(game, n_steps=800)
    ref = scalar_value(-0.5 + 0.4, 0.8, 2.0 - 1.0 + 0.7, 0.3 + 0.2, 1.5, 1.0 - 0.8 + 0.6, 2.0, 1.5, 0.3)
    assert nash.values0[0] == pytest.approx(ref, rel=1e-9)
    assert cost_evaluate(game, nash.policy)[0] == pytest.approx(ref, rel=1e-9)
    br = best_response_value(game, nash.policy)
    assert br.values[0] == pytest.approx(ref, rel=1e-9)


def test_decoupled_feedback_is_diagonal_scalar_theory():
    co = decoupled_coeffs()
    game = sample_game(MinMax(), co, 5, seed=2)
    nash = solve_nash(game, n_steps=600)
    F = nash.F
    off = F - np.einsum("tii->ti", F)[:, :, None] * np.eye(5)
    assert np.max(np.abs(off)) == 0.0
    eta = solve_eta(assemble_gamma(co), 3.0, n_steps=600)
    expected = -(co.b * eta.values + co.C_f[0, 1]) / co.C_f[1, 1]
    assert np.max(np.abs(np.einsum("tii->ti", F) - expected[:, None])) < 1e-8


def test_two_player_swap_symmetry(bench):
    game = sample_game(MinMax(), bench, 2, indices=[0.25, 0.75])
    nash = solve_nash(game, n_steps=600)
    F, g = nash.F, nash.g
    assert np.all(np.isfinite(F)) and np.all(np.isfinite(g))
    assert np.max(np.abs(F[:, 0, 0] - F[:, 1, 1])) < 1e-13
    assert np.max(np.abs(F[:, 0, 1] - F[:, 1, 0])) < 1e-13
    assert np.max(np.abs(g[:, 0] - g[:, 1])) < 1e-13


def test_permutation_equivariance(bench):
    game = sample_game(PowerLaw(-0.4), bench, 5, seed=1)
    perm = np.array([3, 0, 4, 1, 2])
    a = solve_nash(game, n_steps=300)
    b = solve_nash(game.permuted(perm), n_steps=300)
    assert np.allclose(b.F, a.F[:, perm][:, :, perm], atol=1e-12)
    assert np.allclose(b.g, a.g[:, perm], atol=1e-12)
    assert np.allclose(cost_evaluate(game.permuted(perm), b.policy), cost_evaluate(game, a.policy)[perm],
                       rtol=1e-11)


@pytest.mark.parametrize("kernel", [Constant(1.0), MinMax()], ids=["constant", "min_max"])
def test_nash_self_test(bench, kernel):
    game = sample_game(kernel, bench, 4, seed=0)
    nash = solve_nash(game, n_steps=600)
    J, BR, gap = nash_gaps(game, nash.policy)
    scale = np.max(np.abs(J))
    assert np.max(np.abs(gap)) <= 1e-6 * scale
    assert np.max(np.abs(J - nash.values0)) <= 1e-8 * scale


def test_best_response_decoupled_scalar_oracle():
    co = decoupled_coeffs(a=-0.3, b=0.9)
    game = sample_game(Constant(1.0), co, 1)
    br = best_response_value(game, zero_policy(1, 600, 3.0))
    ref = scalar_value(-0.3, 0.9, 1.0, 0.0, 1.0, 1.0, 3.0, 8.0, 0.25)
    assert br.values[0] == pytest.approx(ref, rel=1e-9)


def test_zero_costs():
    co = GameCoefficients(-1.0, 1.0, 1.0, [[0, 0, 0], [0, 1, 0], [0, 0, 0]], [[0, 0], [0, 0]], 3.0, 8.0, 0.25)
    game = sample_game(MinMax(), co, 3, seed=0)
    pol = zero_policy(3, 300, 3.0)
    assert np.all(cost_evaluate(game, pol) == 0.0)
    br = best_response_value(game, pol, keep_policy=True)
    assert np.max(np.abs(br.values)) < 1e-14
    assert np.max(np.abs(br.policy_rows.values)) == 0.0
    assert np.max(np.abs(br.offsets.values)) == 0.0


def test_best_response_is_a_lower_bound(bench):
    game = sample_game(MinMax(), bench, 4, seed=3)
    pol = zero_policy(4, 600, 3.0)
    J = cost_evaluate(game, pol)
    br = best_response_value(game, pol)
    assert np.all(br.values <= J + 1e-12)


def test_lyapunov_matches_monte_carlo(bench):
    game = sample_game(MinMax(), bench, 4, seed=0)
    nash = solve_nash(game, n_steps=600)
    J = cost_evaluate(game, nash.policy)
    m, se = cost_evaluate_mc(game, nash.policy, n_paths=10_000, seed=0)
    assert np.all(np.abs(m - J) <= 3 * se)


def test_fbsde_residual_first_order(bench):
    game = sample_game(MinMax(), bench, 3, seed=0)
    res = [fbsde_residual(solve_nash(game, n_steps=n, keep_tensors=True), n_paths=100, seed=1)
           for n in (300, 600)]
    for r in res:
        assert r["terminal_residual"] < 1e-12
    ratio = res[0]["drift_residual"] / res[1]["drift_residual"]
    assert 1.5 < ratio < 2.6


def test_decoupling_limit_linear(bench):
    offs = []
    for eps in (1e-3, 2e-3):
        co = GameCoefficients(-1.0, 1.0, eps, [[1, 0, 0], [0, 1, 0], [0, 0, 0]], [[1, 0], [0, 0]], 3.0, 8.0, 0.25)
        nash = solve_nash(sample_game(MinMax(), co, 3, seed=0), n_steps=300)
        F = nash.F
        offs.append(np.max(np.abs(F - np.einsum("tii->ti", F)[:, :, None] * np.eye(3))))
    assert offs[0] > 0
    assert offs[1] / offs[0] == pytest.approx(2.0, rel=1e-2)


def test_size_limit(bench):
    with pytest.raises(ValueError):
        solve_nash(sample_game(Constant(1.0), bench, 10), max_N=8)


def test_finite_blowup_detected():
    co = GameCoefficients(0.0, 1.0, 0.0, [[-1, 0, 0], [0, 1, 0], [0, 0, 0]], [[0, 0], [0, 0]], 5.0)
    with pytest.raises(FiniteGameIllPosedError):
        solve_nash(sample_game(Constant(1.0), co, 2), n_steps=500)
