"""Euler-Maruyama simulation of the continuum and N-player games with shared
noise, and the empirical statistics built on it."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .equilibrium import EquilibriumSolution, solve_equilibrium
from .finite_game import (FiniteGame, LinearPolicy, NashFeedback, best_response_value, cost_evaluate,
                          graphon_profile, sample_game, solve_nash)
from .graphon import GraphonKernel
from .integrate import TimeGrid
from .model import GameCoefficients
from .noise import BROWNIAN, INITIAL, CounterNoise


@dataclass
class SimConfig:
    n_paths: int = 10_000
    n_steps: int | None = None     # simulation steps on [0, T]; default: solver grid
    seed: int = 0
    store_every: int = 0           # keep every k-th time slice of the paths (0: none)
    noise_scale: float = 1.0       # 0 switches the Brownian forcing off (tests)
    hist_times: tuple = ()         # times at which full cross-sections are kept


def _sim_grid(sol_grid: TimeGrid, n_steps: int | None) -> tuple[TimeGrid, int]:
    n = n_steps or sol_grid.n_steps
    if sol_grid.n_steps % n and n % sol_grid.n_steps:
        raise ValueError(f"simulation steps {n} and solver steps {sol_grid.n_steps} are not commensurate")
    return TimeGrid(sol_grid.T, n), n


@dataclass
class Ensemble:
    t: np.ndarray
    indices: np.ndarray
    mean: np.ndarray              # (n_t, P)
    var: np.ndarray               # (n_t, P)
    n_paths: int
    paths: np.ndarray | None = None       # (n_stored, n_paths, P)
    path_times: np.ndarray | None = None
    sections: dict = field(default_factory=dict)   # time -> (n_paths, P)

    def se(self):
        return np.sqrt(self.var / self.n_paths)


def _coeff_at(path, t):
    return path.at(t) if len(t) != path.grid.n_steps + 1 else path.values


def simulate_graphon_policy(sol: EquilibriumSolution, indices, cfg: SimConfig,
                            players=None) -> Ensemble:
    """Simulate ``X^{x}`` for each index under the equilibrium feedback and
    the deterministic aggregate ``Zhat^x``.

    ``players[j]`` is the noise identity of ``indices[j]`` (defaults to ``j``),
    which is what couples these paths to an N-player simulation.
    """
    co = sol.coeffs
    x = np.asarray(indices, dtype=float)
    P = len(x)
    players = np.arange(P) if players is None else np.asarray(players)
    grid, n = _sim_grid(sol.grid, cfg.n_steps)
    t = grid.t
    dt = grid.dt
    Zp, zp = sol.paths_at(x)
    Z = _coeff_at(Zp, t)
    ze = _coeff_at(zp, t)
    eta = _coeff_at(sol.eta.path, t)
    cf = co.C_f
    r = cf[1, 1]
    slope = co.a - co.b * (cf[0, 1] + co.b * eta) / r                   # (n+1,)
    offset = co.c * Z - co.b * (cf[1, 2] * Z + co.b * ze) / r           # (n+1, P)
    noise = CounterNoise(cfg.seed)
    X = co.m0 + math.sqrt(co.v0) * noise.block(players, 0, cfg.n_paths, INITIAL)
    mean = np.empty((n + 1, P))
    var = np.empty((n + 1, P))
    store = []
    stimes = []
    sections = {}
    hist_idx = {int(round(ht / dt)): ht for ht in cfg.hist_times}
    sq = math.sqrt(dt) * cfg.noise_scale

    def observe(i, X):
        mean[i] = X.mean(axis=0)
        var[i] = X.var(axis=0, ddof=1) if cfg.n_paths > 1 else 0.0
        if cfg.store_every and i % cfg.store_every == 0:
            store.append(X.copy())
            stimes.append(t[i])
        if i in hist_idx:
            sections[hist_idx[i]] = X.copy()

    observe(0, X)
    for i in range(n):
        X = X + (slope[i] * X + offset[i]) * dt
        if sq:
            X += sq * noise.block(players, i, cfg.n_paths)
        observe(i + 1, X)
    return Ensemble(t, x, mean, var, cfg.n_paths, np.array(store) if store else None,
                    np.array(stimes) if stimes else None, sections)


def simulate_policy(game: FiniteGame, policy: LinearPolicy, cfg: SimConfig) -> Ensemble:
    """Euler-Maruyama for the N-player system under a linear-affine profile."""
    co = game.coeffs
    N = game.N
    grid, n = _sim_grid(policy.grid, cfg.n_steps)
    ratio = policy.grid.n_steps // n if policy.grid.n_steps >= n else None
    if ratio is None:
        raise ValueError("simulation grid must not be finer than the policy grid")
    dt = grid.dt
    base = co.a * np.eye(N) + co.c * game.G
    noise = CounterNoise(cfg.seed)
    players = np.arange(N)
    X = co.m0 + math.sqrt(co.v0) * noise.block(players, 0, cfg.n_paths, INITIAL)
    mean = np.empty((n + 1, N))
    var = np.empty((n + 1, N))
    mean[0], var[0] = X.mean(0), X.var(0, ddof=1)
    sq = math.sqrt(dt) * cfg.noise_scale
    for i in range(n):
        j = i * ratio
        A = base + co.b * policy.F_node(j)
        X = X + (X @ A.T + co.b * policy.h.values[j]) * dt
        if sq:
            X += sq * noise.block(players, i, cfg.n_paths)
        mean[i + 1], var[i + 1] = X.mean(0), X.var(0, ddof=1)
    return Ensemble(grid.t, game.indices, mean, var, cfg.n_paths)


# --- propagation of chaos -------------------------------------------------------------------


@dataclass
class DeltaEstimate:
    N: int
    delta: float
    delta_se: float
    state_costate: np.ndarray     # E sup_t (dX^2 + dp^2) per player
    aggregate: np.ndarray         # sup_t E |dZ|^2 per player
    argmax: int

    def to_dict(self):
        return {"N": self.N, "delta": self.delta, "delta_se": self.delta_se, "argmax": self.argmax}


def estimate_delta(game: FiniteGame, nash: NashFeedback, sol: EquilibriumSolution, cfg: SimConfig) -> DeltaEstimate:
    """Monte Carlo estimate of the propagation-of-chaos discrepancy.

    The N-player system under the Nash feedback and the continuum players at
    the same indices are driven by identical initial draws and Brownian
    increments.  Costates: ``p^{kk,N} = (P_k e_k) . X^N + s_k[k]`` and
    ``p^{x_k} = eta X^{x_k} + zeta^{x_k}``.  The time supremum is taken on the
    simulation grid.
    """
    if nash.game is not game and not np.array_equal(nash.game.indices, game.indices):
        raise ValueError("Nash feedback belongs to a different game")
    if nash.grid.n_steps != sol.grid.n_steps or abs(nash.grid.T - sol.grid.T) > 1e-12:
        raise ValueError("Nash and equilibrium grids differ")
    co = game.coeffs
    N = game.N
    n = nash.grid.n_steps
    dt = nash.grid.dt
    G = game.G
    base = co.a * np.eye(N) + co.c * G
    Zp, zp = sol.paths_at(game.indices)
    Zc, zc = Zp.values, zp.values
    eta = sol.eta.values
    cf = co.C_f
    r = cf[1, 1]
    slope = co.a - co.b * (cf[0, 1] + co.b * eta) / r
    offset = co.c * Zc - co.b * (cf[1, 2] * Zc + co.b * zc) / r
    F, h = nash.policy.F.values, nash.policy.h.values
    rows, offs = nash.costate_rows, nash.costate_offsets
    noise = CounterNoise(cfg.seed)
    players = np.arange(N)
    m = cfg.n_paths
    agg = np.zeros((n + 1, N))
    run = np.zeros((m, N))
    sq = math.sqrt(dt) * cfg.noise_scale

    def gaps(i, XN, Xc):
        pN = XN @ rows[i].T + offs[i]
        pc = eta[i] * Xc + zc[i]
        np.maximum(run, (XN - Xc) ** 2 + (pN - pc) ** 2, out=run)
        agg[i] += np.sum((XN @ G.T - Zc[i]) ** 2, axis=0)

    XN = co.m0 + math.sqrt(co.v0) * noise.block(players, 0, m, INITIAL)
    Xc = XN.copy()
    gaps(0, XN, Xc)
    for i in range(n):
        dB = sq * noise.block(players, i, m) if sq else 0.0
        XN = XN + (XN @ (base + co.b * F[i]).T + co.b * h[i]) * dt + dB
        Xc = Xc + (slope[i] * Xc + offset[i]) * dt + dB
        gaps(i + 1, XN, Xc)
    sup_sum = run.sum(axis=0)
    sup_sq = (run ** 2).sum(axis=0)
    npth = cfg.n_paths
    sc = sup_sum / npth
    sc_var = np.maximum(sup_sq / npth - sc ** 2, 0.0) / max(npth - 1, 1)
    ag = np.max(agg / npth, axis=0)
    total = sc + ag
    k = int(np.argmax(total))
    return DeltaEstimate(N, float(total[k]), float(math.sqrt(sc_var[k])), sc, ag, k)


# --- law of large numbers -------------------------------------------------------------------


@dataclass
class ELLNResult:
    N: np.ndarray
    variance: np.ndarray
    slope: float | None
    x: float
    t: float


def elln_check(sol: EquilibriumSolution, kernel: GraphonKernel, N_list, cfg: SimConfig, x: float = 0.5,
               t: float | None = None) -> ELLNResult:
    """Variance over paths of ``(1/N) sum_k w(x, x_k) X^{x_k}_t`` for each ``N``.

    Indices come from the seeded prefix-stable stream, players are simulated
    once for the largest ``N`` and prefixes are reused.
    """
    from .finite_game import sample_indices

    N_list = sorted(int(v) for v in N_list)
    t = sol.grid.T if t is None else float(t)
    idx = sample_indices(cfg.seed, N_list[-1])
    ens = simulate_graphon_policy(sol, idx, SimConfig(cfg.n_paths, cfg.n_steps, cfg.seed,
                                                      noise_scale=cfg.noise_scale, hist_times=(t,)))
    Xt = ens.sections[t]
    w = kernel(np.full(len(idx), x), idx)
    var = []
    for N in N_list:
        agg = Xt[:, :N] @ w[:N] / N
        var.append(float(np.var(agg, ddof=1)))
    var = np.array(var)
    slope = None
    if np.all(var > 0) and len(N_list) >= 2:
        slope = float(np.polyfit(np.log(N_list), np.log(var), 1)[0])
    return ELLNResult(np.array(N_list), var, slope, x, t)


# --- epsilon-Nash ---------------------------------------------------------------------------


@dataclass
class GapResult:
    N: int
    gaps: np.ndarray
    J: np.ndarray
    best: np.ndarray

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gaps))


def eps_nash_gap(game: FiniteGame, sol: EquilibriumSolution) -> GapResult:
    """Cost of the continuum policy minus the best response against it, per player."""
    prof = graphon_profile(game, sol)
    J = cost_evaluate(game, prof)
    br = best_response_value(game, prof)
    return GapResult(game.N, J - br.values, J, br.values)


# --- sweep ----------------------------------------------------------------------------------


@dataclass
class ConvergenceRecord:
    N: int
    delta_hat: float | None = None
    delta_se: float | None = None
    eps_gap: float | None = None
    elln_var: float | None = None
    ratio_loglog: float | None = None


@dataclass
class ConvergenceReport:
    records: list
    slope: float | None
    intercept: float | None
    regression_skipped: bool
    note: str = ""

    @property
    def N(self):
        return np.array([r.N for r in self.records])

    @property
    def delta(self):
        return np.array([np.nan if r.delta_hat is None else r.delta_hat for r in self.records])

    @property
    def eps(self):
        return np.array([np.nan if r.eps_gap is None else r.eps_gap for r in self.records])

    def to_dict(self):
        return {"records": [asdict(r) for r in self.records], "slope": self.slope,
                "intercept": self.intercept, "regression_skipped": self.regression_skipped, "note": self.note}


def loglog_ratio(delta: float, N: int) -> float | None:
    """``delta N / log log N`` (defined for ``N >= 3``)."""
    if N < 3:
        return None
    return delta * N / math.log(math.log(N))


def convergence_sweep(kernel: GraphonKernel, coeffs: GameCoefficients, N_list, cfg: SimConfig,
                      n_modes: int = 1, n_steps: int = 600, delta: bool = True, eps: bool = True,
                      eps_max_N: int = 64, elln_x: float | None = 0.5, sol: EquilibriumSolution | None = None,
                      mapper=map, zero_tol: float = 1e-12, progress=None) -> ConvergenceReport:
    """Propagation-of-chaos and epsilon-Nash measurements along one index stream."""
    N_list = [int(v) for v in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N values must be strictly increasing")
    if sol is None:
        sol = solve_equilibrium(coeffs, kernel, n_modes, n_steps=n_steps)

    def one(N):
        game = sample_game(kernel, coeffs, N, cfg.seed)
        rec = ConvergenceRecord(N)
        if delta:
            nash = solve_nash(game, n_steps=sol.grid.n_steps)
            d = estimate_delta(game, nash, sol, cfg)
            rec.delta_hat, rec.delta_se = d.delta, d.delta_se
            rec.ratio_loglog = loglog_ratio(d.delta, N)
            del nash
        if eps and N <= eps_max_N:
            rec.eps_gap = eps_nash_gap(game, sol).max_gap
        if progress is not None:
            progress(rec)
        return rec

    records = list(mapper(one, N_list))
    if elln_x is not None:
        el = elln_check(sol, kernel, N_list, SimConfig(min(cfg.n_paths, 4000), None, cfg.seed), x=elln_x)
        for rec, v in zip(records, el.variance):
            rec.elln_var = v
    slope = intercept = None
    skipped = True
    note = ""
    ds = np.array([r.delta_hat for r in records if r.delta_hat is not None])
    Ns = np.array([r.N for r in records if r.delta_hat is not None])
    if len(ds) >= 2 and np.all(ds > zero_tol):
        slope, intercept = (float(v) for v in np.polyfit(np.log(Ns), np.log(ds), 1))
        skipped = False
    elif len(ds):
        note = "delta estimates vanish; regression skipped"
    return ConvergenceReport(records, slope, intercept, skipped, note)


# --- occupation measure ---------------------------------------------------------------------


def occupation_histogram(ensemble: Ensemble, bins) -> list[tuple]:
    """Rows ``(t, bin_left, bin_right, mass)`` pooling all players and paths.

    Uses the stored path slices when present, otherwise the kept sections.
    """
    if ensemble.paths is not None:
        times, slices = ensemble.path_times, ensemble.paths
    else:
        times = np.array(sorted(ensemble.sections))
        slices = [ensemble.sections[tt] for tt in times]
    edges = np.asarray(bins, dtype=float) if np.ndim(bins) else None
    if edges is None:
        allv = np.concatenate([np.ravel(s) for s in slices])
        lo, hi = float(allv.min()), float(allv.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    rows = []
    for tt, s in zip(times, slices):
        cnt, _ = np.histogram(np.ravel(s), bins=edges)
        mass = cnt / max(cnt.sum(), 1)
        rows.extend((float(tt), float(edges[j]), float(edges[j + 1]), float(mass[j])) for j in range(len(mass)))
    return rows
