"""Sampled N-player game: exact feedback Nash equilibrium, best responses and
exact cost evaluation for linear-affine strategy profiles.

Player ``k`` controls ``X^k`` with ``dX = (a X + b alpha + c G X) dt + dB`` where
``G = W_N / N`` (diagonal included), and pays

    E int 1/2 (X^k, alpha^k, Z^k) C_f (X^k, alpha^k, Z^k)^T dt + 1/2 (X^k_T, Z^k_T) C_h (...)^T

with ``Z^k = (G X)_k``.  Strategies are linear-affine in the full state:
``alpha = F_t X + h_t``.  The equilibrium is the feedback (closed-loop)
Nash equilibrium: player ``k``'s value is ``X^T P_k X / 2 + s_k . X + r_k`` and
all ``N`` coupled Riccati equations are integrated together as one
``(N, N, N)`` tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, FiniteGameIllPosedError
from .graphon import GraphonKernel, sample_weights
from .integrate import DEFAULT_BLOWUP_CAP, GridPath, TimeGrid, rk4
from .model import GameCoefficients

DEFAULT_MAX_N = 128


def sample_indices(seed: int, N: int) -> np.ndarray:
    """First ``N`` draws of the seeded uniform stream (prefix-stable in ``N``)."""
    return np.random.default_rng(seed).random(N)


@dataclass(frozen=True, eq=False)
class FiniteGame:
    coeffs: GameCoefficients
    indices: np.ndarray
    W: np.ndarray
    seed: int | None = None
    kernel: GraphonKernel | None = None

    @property
    def N(self) -> int:
        return len(self.indices)

    @property
    def G(self) -> np.ndarray:
        return self.W / self.N

    def to_dict(self):
        return {"N": self.N, "seed": self.seed, "indices": self.indices.tolist(),
                "kernel": self.kernel.to_dict() if self.kernel is not None else None,
                "coefficients": self.coeffs.to_dict()}

    def permuted(self, perm) -> "FiniteGame":
        perm = np.asarray(perm)
        return FiniteGame(self.coeffs, self.indices[perm], self.W[np.ix_(perm, perm)], self.seed, self.kernel)


def sample_game(kernel: GraphonKernel, coeffs: GameCoefficients, N: int, seed: int = 0,
                indices=None) -> FiniteGame:
    if N < 1:
        raise ValueError("N must be at least 1")
    x = sample_indices(seed, N) if indices is None else np.asarray(indices, dtype=float)
    if len(x) != N:
        raise ValueError(f"expected {N} indices, got {len(x)}")
    return FiniteGame(coeffs, x, sample_weights(kernel, x), seed if indices is None else None, kernel)


# --- strategy profiles ----------------------------------------------------------------------


@dataclass
class LinearPolicy:
    """``alpha_t = F_t X_t + h_t``; ``F`` stored as its diagonal when ``diagonal``."""

    F: GridPath
    h: GridPath
    diagonal: bool = False

    @property
    def grid(self) -> TimeGrid:
        return self.h.grid

    @property
    def N(self) -> int:
        return self.h.values.shape[1]

    def full_F(self, values: np.ndarray) -> np.ndarray:
        return np.diag(values) if self.diagonal else values

    def F_at(self, t) -> np.ndarray:
        return self.full_F(self.F(t))

    def F_node(self, i) -> np.ndarray:
        return self.full_F(self.F.values[i])

    def replace_player(self, k: int, other: "LinearPolicy") -> "LinearPolicy":
        """Profile with player ``k``'s row taken from ``other``."""
        Fv = self._dense(self)
        Fo = self._dense(other)
        Fv.values[:, k, :] = Fo.values[:, k, :]
        Fv.derivs[:, k, :] = Fo.derivs[:, k, :]
        hv = GridPath(self.grid, self.h.values.copy(), self.h.derivs.copy())
        hv.values[:, k] = other.h.values[:, k]
        hv.derivs[:, k] = other.h.derivs[:, k]
        return LinearPolicy(Fv, hv, False)

    @staticmethod
    def _dense(p: "LinearPolicy") -> GridPath:
        if not p.diagonal:
            return GridPath(p.grid, p.F.values.copy(), p.F.derivs.copy())
        n = p.N
        vals = np.zeros(p.F.values.shape[:1] + (n, n))
        ders = np.zeros_like(vals)
        idx = np.arange(n)
        vals[:, idx, idx] = p.F.values
        ders[:, idx, idx] = p.F.derivs
        return GridPath(p.grid, vals, ders)


def graphon_profile(game: FiniteGame, sol) -> LinearPolicy:
    """Equilibrium feedback of the continuum game applied at the sampled indices.

    Player ``j`` uses ``-(C12 X^j + C23 Zhat^{x_j} + b (eta X^j + zeta^{x_j})) / C22``,
    ignoring the other players' states.
    """
    cf = game.coeffs.C_f
    b, r = game.coeffs.b, cf[1, 1]
    Z, ze = sol.paths_at(game.indices)
    N = game.N
    eta = sol.eta.path
    Fd = GridPath(sol.grid, np.repeat((-(cf[0, 1] + b * eta.values) / r)[:, None], N, axis=1),
                  np.repeat((-b * eta.derivs / r)[:, None], N, axis=1))
    h = GridPath(sol.grid, -(cf[1, 2] * Z.values + b * ze.values) / r,
                 -(cf[1, 2] * Z.derivs + b * ze.derivs) / r)
    return LinearPolicy(Fd, h, diagonal=True)


# --- cost structure -------------------------------------------------------------------------


def _cost_tensors(game: FiniteGame):
    """``Q[k]`` (state quadratic form), ``S`` (rows ``S_k``) and ``H[k]`` (terminal)."""
    N = game.N
    cf, ch = game.coeffs.C_f, game.coeffs.C_h
    E = np.eye(N)
    G = game.G
    ee = np.einsum("ki,kj->kij", E, E)
    eg = np.einsum("ki,kj->kij", E, G)
    gg = np.einsum("ki,kj->kij", G, G)
    Q = cf[0, 0] * ee + cf[0, 2] * (eg + eg.transpose(0, 2, 1)) + cf[2, 2] * gg
    H = ch[0, 0] * ee + ch[0, 1] * (eg + eg.transpose(0, 2, 1)) + ch[1, 1] * gg
    S = cf[0, 1] * E + cf[1, 2] * G
    return Q, S, H


# --- feedback Nash --------------------------------------------------------------------------


@dataclass
class NashFeedback:
    """Feedback Nash equilibrium on a time grid.

    ``policy`` carries ``F_t`` (``N x N``) and ``h_t``; ``costate_rows[i, k]``
    is ``P_k(t_i) e_k`` so that player ``k``'s own costate is
    ``p^{kk} = costate_rows[i, k] . X + costate_offsets[i, k]``.
    """

    game: FiniteGame
    policy: LinearPolicy
    costate_rows: np.ndarray
    costate_offsets: np.ndarray
    values0: np.ndarray           # J_k from the value functions at t = 0
    P0: np.ndarray
    tensors: dict | None = None   # full P, s at every node when kept
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.policy.grid

    @property
    def F(self):
        return self.policy.F.values

    @property
    def g(self):
        return self.policy.h.values


def _initial_moments(game: FiniteGame):
    N = game.N
    return np.full(N, float(game.coeffs.m0)), float(game.coeffs.v0) * np.eye(N)


def _quad_value(P, s, r, mu0, Sigma0):
    """``E[X^T P_k X / 2 + s_k . X + r_k]`` for every ``k``."""
    return (0.5 * (np.einsum("i,kij,j->k", mu0, P, mu0) + np.einsum("kij,ji->k", P, Sigma0))
            + s @ mu0 + r)


def solve_nash(game: FiniteGame, n_steps: int = 600, blowup_cap: float = DEFAULT_BLOWUP_CAP,
               keep_tensors: bool = False, max_N: int = DEFAULT_MAX_N) -> NashFeedback:
    """Integrate the coupled value-function equations backward from ``P_k(T) = H_k``.

    With the profile ``alpha_j = F_j . X + h_j`` where
    ``F_j = -(S_j + b P_j e_j) / C22``, ``h_j = -b s_j[j] / C22`` and closed-loop
    drift ``A = a I + c G + b F``::

        -P_k' = Q_k + F_k S_k^T + S_k F_k^T + C22 F_k F_k^T + P_k A + A^T P_k
        -s_k' = (S_k + C22 F_k) h_k + A^T s_k + b P_k h
        -r_k' = C22 h_k^2 / 2 + b s_k . h + tr(P_k) / 2
    """
    N = game.N
    if N > max_N:
        raise ValueError(f"N = {N} exceeds the configured limit {max_N}")
    co = game.coeffs
    a, b, c = co.a, co.b, co.c
    r22 = float(co.C_f[1, 1])
    if not r22 > 0:
        raise FiniteGameIllPosedError("control cost must be positive", escape_time=co.T)
    grid = TimeGrid(co.T, n_steps)
    Q, S, H = _cost_tensors(game)
    G = game.G
    base = a * np.eye(N) + c * G
    idx = np.arange(N)
    nP = N * N * N
    nS = N * N

    def unpack(y):
        return y[:nP].reshape(N, N, N), y[nP:nP + nS].reshape(N, N), y[nP + nS:]

    def feedback(P, s):
        F = -(S + b * P[idx, idx, :]) / r22
        h = -b * s[idx, idx] / r22
        return F, h

    def rhs(t, y):
        P, s, r = unpack(y)
        F, h = feedback(P, s)
        A = base + b * F
        PA = P @ A
        SF = np.einsum("ki,kj->kij", S, F)
        dP = Q + SF + SF.transpose(0, 2, 1) + r22 * np.einsum("ki,kj->kij", F, F) + PA + PA.transpose(0, 2, 1)
        ds = (S + r22 * F) * h[:, None] + s @ A + b * (P @ h)
        dr = 0.5 * r22 * h * h + b * (s @ h) + 0.5 * np.trace(P, axis1=1, axis2=2)
        return -np.concatenate([dP.ravel(), ds.ravel(), dr])

    n = grid.n_steps
    Fv = np.empty((n + 1, N, N))
    Fd = np.empty_like(Fv)
    hv = np.empty((n + 1, N))
    hd = np.empty_like(hv)
    rows = np.empty((n + 1, N, N))
    offs = np.empty((n + 1, N))
    keep = {"P": np.empty((n + 1, N, N, N)), "s": np.empty((n + 1, N, N)),
            "dP": np.empty((n + 1, N, N, N))} if keep_tensors else None
    final = {}

    def record(i, t, y, dy):
        P, s, r = unpack(y)
        dP, ds, _ = unpack(dy)
        F, h = feedback(P, s)
        Fv[i], hv[i] = F, h
        Fd[i] = -b * dP[idx, idx, :] / r22
        hd[i] = -b * ds[idx, idx] / r22
        rows[i] = P[idx, idx, :]
        offs[i] = s[idx, idx]
        if keep is not None:
            keep["P"][i], keep["s"][i], keep["dP"][i] = P, s, dP
        if i == 0:
            final["P"], final["s"], final["r"] = P.copy(), s.copy(), r.copy()

    y0 = np.concatenate([H.ravel(), np.zeros(nS), np.zeros(N)])
    try:
        rk4(rhs, y0, grid, backward=True, blowup_cap=blowup_cap, record=record, what="Nash Riccati")
    except BlowUpError as exc:
        raise FiniteGameIllPosedError(f"N = {N}: {exc}", exc.escape_time, exc.diagnostics) from exc
    mu0, Sig0 = _initial_moments(game)
    vals = _quad_value(final["P"], final["s"], final["r"], mu0, Sig0)
    policy = LinearPolicy(GridPath(grid, Fv, Fd), GridPath(grid, hv, hd), False)
    return NashFeedback(game, policy, rows, offs, vals, final["P"], keep)


# --- exact cost evaluation ------------------------------------------------------------------


def _policy_fns(policy: LinearPolicy):
    if policy.diagonal:
        return lambda t: np.diag(policy.F(t)), policy.h
    return policy.F, policy.h


def cost_evaluate(game: FiniteGame, policy: LinearPolicy) -> np.ndarray:
    """Exact expected costs ``J^k`` of a linear-affine profile.

    Mean ``mu`` and covariance ``Sigma`` of the closed-loop state follow
    ``mu' = A mu + b h`` and ``Sigma' = A Sigma + Sigma A^T + I``; the running
    cost of player ``k`` is a quadratic form in ``(X^k, alpha^k, Z^k)`` whose
    second moments follow from ``(mu, Sigma)``.  Everything is integrated
    together with RK4 on the policy grid.
    """
    co = game.coeffs
    N = game.N
    grid = policy.grid
    G = game.G
    base = co.a * np.eye(N) + co.c * G
    Ff, hf = _policy_fns(policy)
    cf = co.C_f
    b = co.b
    mu0, Sig0 = _initial_moments(game)
    nS = N * N

    def moments(mu, Sig, F, h):
        """Second moments of (X^k, alpha^k, Z^k) for every k, shape (N, 3, 3)."""
        FS = F @ Sig
        GS = G @ Sig
        m = np.stack([mu, F @ mu + h, G @ mu], axis=1)
        out = np.einsum("ki,kj->kij", m, m)
        xx = np.diagonal(Sig)
        xa = np.diagonal(FS)
        xz = np.diagonal(GS)
        aa = np.einsum("ij,ij->i", FS, F)
        az = np.einsum("ij,ij->i", FS, G)
        zz = np.einsum("ij,ij->i", GS, G)
        cov = np.stack([np.stack([xx, xa, xz], 1), np.stack([xa, aa, az], 1), np.stack([xz, az, zz], 1)], 1)
        return out + cov

    def rhs(t, y):
        mu, Sig = y[:N], y[N:N + nS].reshape(N, N)
        F, h = Ff(t), hf(t)
        A = base + b * F
        dmu = A @ mu + b * h
        AS = A @ Sig
        dSig = AS + AS.T + np.eye(N)
        M = moments(mu, Sig, F, h)
        dJ = 0.5 * np.einsum("kij,ij->k", M, cf)
        return np.concatenate([dmu, dSig.ravel(), dJ])

    y0 = np.concatenate([mu0, Sig0.ravel(), np.zeros(N)])
    out = {}

    def keep_last(i, t, y, dy):
        if i == grid.n_steps:
            out["y"] = y.copy()

    rk4(rhs, y0, grid, record=keep_last, what="Lyapunov")
    y = out["y"]
    mu, Sig, J = y[:N], y[N:N + nS].reshape(N, N), y[N + nS:]
    GS = G @ Sig
    m2 = np.stack([mu, G @ mu], axis=1)
    term = np.einsum("ki,kj->kij", m2, m2)
    xx = np.diagonal(Sig)
    xz = np.diagonal(GS)
    zz = np.einsum("ij,ij->i", GS, G)
    term = term + np.stack([np.stack([xx, xz], 1), np.stack([xz, zz], 1)], 1)
    return J + 0.5 * np.einsum("kij,ij->k", term, co.C_h)


def cost_evaluate_mc(game: FiniteGame, policy: LinearPolicy, n_paths: int = 10_000,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo costs ``(mean, standard error)`` of a linear-affine profile.

    Stochastic Heun on the policy grid with trapezoidal running cost; with
    additive noise and linear drift the weak bias is second order in ``dt``.
    """
    from .noise import INITIAL, CounterNoise

    co = game.coeffs
    N = game.N
    grid = policy.grid
    dt = grid.dt
    G = game.G
    cf, ch = co.C_f, co.C_h
    base = co.a * np.eye(N) + co.c * G
    noise = CounterNoise(seed)
    players = np.arange(N)
    X = co.m0 + np.sqrt(co.v0) * noise.block(players, 0, n_paths, INITIAL)

    def running(i, X):
        F = policy.F_node(i)
        u = np.stack([X, X @ F.T + policy.h.values[i], X @ G.T], axis=2)   # (paths, N, 3)
        return 0.5 * np.einsum("pki,ij,pkj->pk", u, cf, u)

    def drift(i, X):
        A = base + co.b * policy.F_node(i)
        return X @ A.T + co.b * policy.h.values[i]

    cost = 0.5 * dt * running(0, X)
    sq = np.sqrt(dt)
    for i in range(grid.n_steps):
        dW = sq * noise.block(players, i, n_paths)
        f0 = drift(i, X)
        Xp = X + f0 * dt + dW
        X = X + 0.5 * (f0 + drift(i + 1, Xp)) * dt + dW
        w = 0.5 if i + 1 == grid.n_steps else 1.0
        cost += w * dt * running(i + 1, X)
    term = np.stack([X, X @ G.T], axis=2)
    cost += 0.5 * np.einsum("pki,ij,pkj->pk", term, ch, term)
    return cost.mean(axis=0), cost.std(axis=0, ddof=1) / np.sqrt(n_paths)


# --- best responses -------------------------------------------------------------------------


@dataclass
class BestResponse:
    values: np.ndarray          # optimal cost of each deviating player
    players: np.ndarray
    policy_rows: GridPath | None = None   # optimal feedback row of each player
    offsets: GridPath | None = None


def best_response_value(game: FiniteGame, policy: LinearPolicy, players=None, keep_policy: bool = False,
                        blowup_cap: float = DEFAULT_BLOWUP_CAP) -> BestResponse:
    """Optimal cost of player ``k`` when everybody else keeps ``policy``.

    Player ``k`` faces an LQ problem on the full state with drift
    ``A_k X + d_k + b e_k u`` where ``A_k = a I + c G + b F - b e_k F_k^T`` and
    ``d_k = b (h - h_k e_k)``; its value ``X^T Pi X / 2 + sigma . X + rho``
    solves, with ``K = S_k + b Pi e_k``::

        -Pi' = Q_k + A_k^T Pi + Pi A_k - K K^T / C22
        -sigma' = A_k^T sigma + Pi d_k - K b sigma_k / C22
        -rho' = sigma . d_k + tr(Pi) / 2 - (b sigma_k)^2 / (2 C22)

    All requested players are solved in one batched sweep.
    """
    co = game.coeffs
    N = game.N
    players = np.arange(N) if players is None else np.atleast_1d(np.asarray(players))
    nk = len(players)
    grid = policy.grid
    G = game.G
    Q, S, H = _cost_tensors(game)
    Q, S, H = Q[players], S[players], H[players]
    a, b, c = co.a, co.b, co.c
    r22 = float(co.C_f[1, 1])
    base = a * np.eye(N) + c * G
    Ff, hf = _policy_fns(policy)
    kk = np.arange(nk)
    nP = nk * N * N
    nS = nk * N

    def unpack(y):
        return y[:nP].reshape(nk, N, N), y[nP:nP + nS].reshape(nk, N), y[nP + nS:]

    def rhs(t, y):
        Pi, sig, rho = unpack(y)
        F, h = Ff(t), hf(t)
        Afull = base + b * F
        # A_k = Afull - b e_k F_k^T, d_k = b (h - h_k e_k)
        A = np.broadcast_to(Afull, (nk, N, N)).copy()
        A[kk, players, :] -= b * F[players]
        d = np.broadcast_to(b * h, (nk, N)).copy()
        d[kk, players] = 0.0
        PiA = Pi @ A
        K = S + b * Pi[kk, :, players]
        bs = b * sig[kk, players]
        dPi = Q + PiA + PiA.transpose(0, 2, 1) - np.einsum("ki,kj->kij", K, K) / r22
        dsig = np.einsum("kji,kj->ki", A, sig) + np.einsum("kij,kj->ki", Pi, d) - K * (bs / r22)[:, None]
        drho = np.einsum("ki,ki->k", sig, d) + 0.5 * np.trace(Pi, axis1=1, axis2=2) - bs * bs / (2 * r22)
        return -np.concatenate([dPi.ravel(), dsig.ravel(), drho])

    n = grid.n_steps
    store = {}
    if keep_policy:
        store["Fv"] = np.empty((n + 1, nk, N))
        store["Fd"] = np.empty((n + 1, nk, N))
        store["hv"] = np.empty((n + 1, nk))
        store["hd"] = np.empty((n + 1, nk))

    def record(i, t, y, dy):
        Pi, sig, rho = unpack(y)
        if keep_policy:
            dPi, dsig, _ = unpack(dy)
            store["Fv"][i] = -(S + b * Pi[kk, :, players]) / r22
            store["Fd"][i] = -b * dPi[kk, :, players] / r22
            store["hv"][i] = -b * sig[kk, players] / r22
            store["hd"][i] = -b * dsig[kk, players] / r22
        if i == 0:
            store["final"] = (Pi.copy(), sig.copy(), rho.copy())

    y0 = np.concatenate([H.ravel(), np.zeros(nS), np.zeros(nk)])
    try:
        rk4(rhs, y0, grid, backward=True, blowup_cap=blowup_cap, record=record, what="best-response Riccati")
    except BlowUpError as exc:
        raise FiniteGameIllPosedError(f"best response: {exc}", exc.escape_time, exc.diagnostics) from exc
    mu0, Sig0 = _initial_moments(game)
    vals = _quad_value(*store["final"], mu0, Sig0)
    br = BestResponse(vals, players)
    if keep_policy:
        br.policy_rows = GridPath(grid, store["Fv"], store["Fd"])
        br.offsets = GridPath(grid, store["hv"], store["hd"])
    return br


def nash_gaps(game: FiniteGame, policy: LinearPolicy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(J, best-response values, J - best)`` for every player."""
    J = cost_evaluate(game, policy)
    br = best_response_value(game, policy)
    return J, br.values, J - br.values


# --- FBSDE residual -------------------------------------------------------------------------


def fbsde_residual(nash: NashFeedback, n_paths: int = 200, seed: int = 0) -> dict:
    """Pathwise check of the adjoint equations along closed-loop paths.

    For player ``k`` with the other players on their feedback laws, the
    costate ``p^k = P_k X + s_k`` must satisfy

        dp^k = -(Q_k X + S_k alpha_k + (a I + c G)^T p^k + b sum_{j != k} F_j p^k_j) dt + P_k dB

    and ``p^k_T = H_k X_T``.  Paths are Euler-Maruyama on the Riccati grid; the
    returned ``drift_residual`` is the largest cumulative mismatch of the
    integrated identity, which is ``O(dt)``.  Requires ``keep_tensors``.
    """
    if nash.tensors is None:
        raise ValueError("solve_nash(..., keep_tensors=True) is required")
    game = nash.game
    co = game.coeffs
    N = game.N
    grid = nash.grid
    dt = grid.dt
    P, s = nash.tensors["P"], nash.tensors["s"]
    Q, S, H = _cost_tensors(game)
    G = game.G
    base = co.a * np.eye(N) + co.c * G
    b = co.b
    F = nash.policy.F.values
    h = nash.policy.h.values
    rng = np.random.default_rng(seed)
    X = co.m0 + np.sqrt(co.v0) * rng.standard_normal((n_paths, N))
    cum = np.zeros((n_paths, N, N))
    worst = 0.0
    idx = np.arange(N)
    for i in range(grid.n_steps):
        p = np.einsum("kij,nj->nki", P[i], X) + s[i][None]          # (paths, k, h)
        alpha = X @ F[i].T + h[i]
        # sum_{j != k} F_j p^k_j  ->  F^T p^k minus the own term
        react = np.einsum("jh,nkj->nkh", F[i], p) - F[i][None, :, :] * p[:, idx, idx][:, :, None]
        drift = -(np.einsum("kij,nj->nki", Q, X) + S[None] * alpha[:, :, None]
                  + np.einsum("hj,nkh->nkj", base, p) + b * react)
        dB = np.sqrt(dt) * rng.standard_normal((n_paths, N))
        Xn = X + (X @ (base + b * F[i]).T + b * h[i]) * dt + dB
        pn = np.einsum("kij,nj->nki", P[i + 1], Xn) + s[i + 1][None]
        mart = np.einsum("kij,nj->nki", P[i], dB)
        cum += pn - p - drift * dt - mart
        worst = max(worst, float(np.max(np.abs(cum))))
        X = Xn
    term = np.einsum("kij,nj->nki", P[-1], X) + s[-1][None] - np.einsum("kij,nj->nki", H, X)
    scale = max(1.0, float(np.max(np.abs(P))))
    return {"drift_residual": worst, "terminal_residual": float(np.max(np.abs(term))),
            "scale": scale, "dt": dt}
