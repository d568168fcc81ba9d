"""Graphon-game equilibrium via the eigendecomposition of the interaction
operator, plus an independent fixed-point solver on the index grid."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, OracleFailure
from .graphon import (Constant, GraphonKernel, MinMax, PowerLaw, SpectralGraphon,
                      decompose, midpoint_grid)
from .integrate import DEFAULT_BLOWUP_CAP, GridPath, TimeGrid, rk4
from .model import GameCoefficients, GammaMatrices, assemble_gamma
from .riccati import ModeRiccati, RiccatiSolution, solve_all_modes, solve_eta


def project_initial(sg: SpectralGraphon, m0: float) -> np.ndarray:
    """Coefficients ``x^k = m0 <1, phi_k>`` of the constant initial mean."""
    k = sg.kernel
    if isinstance(k, Constant):
        return np.array([float(m0)])
    if isinstance(k, PowerLaw):
        return np.array([m0 / (np.sqrt(sg.eigenvalues[0]) * (1.0 - k.gamma))])
    if isinstance(k, MinMax):
        ks = np.arange(1, sg.n_modes + 1)
        return m0 * np.sqrt(2.0) * (1.0 - np.cos(np.pi * ks)) / (np.pi * ks)
    return m0 * sg.phi_grid.mean(axis=1)


@dataclass
class ModeTrajectories:
    """``z[:, k]`` and ``v[:, k]`` for every retained mode on the time grid."""

    lam: np.ndarray
    x0: np.ndarray
    z: GridPath
    v: GridPath
    pi: np.ndarray
    fb_residual: float    # max |v - pi z| from the backward verification solve

    @property
    def n_modes(self):
        return len(self.lam)


def _stack(paths, grid):
    return GridPath(grid, np.stack([p.values for p in paths], axis=1),
                    np.stack([p.derivs for p in paths], axis=1))


def solve_modes(gm: GammaMatrices, eta: RiccatiSolution, modes: list[ModeRiccati], x0) -> ModeTrajectories:
    """Forward solve of the decoupled mode equations from ``z_0 = lambda x^k``.

    ``v = pi z``; the coupled system is then re-solved backward for ``v``
    with the computed ``z`` as input and ``v_T = Gamma_T2 z_T`` to measure the
    forward-backward residual.
    """
    grid = eta.grid
    lam = np.array([m.lam for m in modes])
    x0 = np.asarray(x0, dtype=float)
    pi = _stack([m.path for m in modes], grid)
    g11, g12, g22, gz1 = (float(v) for v in (gm.g11, gm.g12, gm.g22, gm.gz1))

    def zrhs(t, z):
        return (g11 + g12 * eta(t) + gz1 * lam + g12 * lam * pi(t)) * z

    z = rk4(zrhs, lam * x0, grid, what="mode aggregate").path
    v_vals = pi.values * z.values
    v_der = pi.derivs * z.values + pi.values * z.derivs
    v = GridPath(grid, v_vals, v_der)
    A = modes[0].A if modes else None

    def vrhs(t, y):
        return (g22 - g12 * eta(t)) * y + A(t) * z(t)

    if modes:
        vb = rk4(vrhs, float(gm.gt2) * z.values[-1], grid, backward=True, what="mode costate").path
        res = float(np.max(np.abs(vb.values - v_vals)))
    else:
        res = 0.0
    return ModeTrajectories(lam, x0, z, v, pi.values, res)


@dataclass
class EquilibriumSolution:
    """Equilibrium data on a time grid and an index grid ``x``.

    Surfaces are stored as ``(n_steps + 1, M)`` arrays; ``Zhat`` and ``zeta``
    are also kept as Hermite paths so that RK4 consumers can read them at
    half steps.
    """

    coeffs: GameCoefficients
    gm: GammaMatrices
    sg: SpectralGraphon
    eta: RiccatiSolution
    modes: list
    traj: ModeTrajectories
    x: np.ndarray
    Zhat: GridPath
    zeta: GridPath
    mean: GridPath
    var: GridPath
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.eta.grid

    @property
    def t(self):
        return self.grid.t

    def spectral_at(self, xs):
        """``(Zhat, zeta)`` at arbitrary indices from the eigenfunction expansion."""
        phi = self.sg.eigenfunctions(xs)
        return self.traj.z.values @ phi, self.traj.v.values @ phi

    def paths_at(self, xs) -> tuple[GridPath, GridPath]:
        """Hermite paths of ``Zhat`` and ``zeta`` at arbitrary indices."""
        phi = self.sg.eigenfunctions(xs)
        return self.traj.z.combine(phi), self.traj.v.combine(phi)

    def interp_index(self, surface: np.ndarray, x) -> np.ndarray:
        """Linear interpolation of a grid surface in the index variable."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([np.interp(x, self.x, row) for row in surface])

    def feedback_control(self, x: float, t: float, state):
        """Equilibrium control ``-(C12 X + C23 Zhat + b (eta X + zeta)) / C22``.

        ``x`` is interpolated linearly on the index grid and ``t`` linearly
        between time nodes.
        """
        Cf = self.coeffs.C_f
        ti = np.atleast_1d(float(t))
        eta_t = float(self.eta.path.linear(ti)[0])
        Z = float(np.interp(x, self.x, self.Zhat.linear(ti)[0]))
        ze = float(np.interp(x, self.x, self.zeta.linear(ti)[0]))
        state = np.asarray(state, dtype=float)
        return -(Cf[0, 1] * state + Cf[1, 2] * Z + self.coeffs.b * (eta_t * state + ze)) / Cf[1, 1]

    def costate_residual(self) -> float:
        """Central-difference residual of the expected costate equation
        ``p' = G21 m + G22 p + Gz2 Zhat`` with ``p = eta m + zeta``."""
        gm = self.gm
        h = self.grid.dt
        p = self.eta.values[:, None] * self.mean.values + self.zeta.values
        fd = (p[2:] - p[:-2]) / (2 * h)
        rhs = gm.g21 * self.mean.values + gm.g22 * p + gm.gz2 * self.Zhat.values
        return float(np.max(np.abs(fd - rhs[1:-1])))

    def operator_consistency(self) -> float:
        """``max |[W m_t] - Zhat_t|`` with the truncated operator on the index grid."""
        if not np.allclose(self.x, self.sg.grid):
            phi = self.sg.eigenfunctions(self.x)
        else:
            phi = self.sg.phi_grid
        coeffs = self.mean.values @ phi.T / len(self.x)
        WZ = (coeffs * self.sg.eigenvalues) @ phi
        return float(np.max(np.abs(WZ - self.Zhat.values)))


def reconstruct(coeffs: GameCoefficients, gm: GammaMatrices, eta: RiccatiSolution, sg: SpectralGraphon,
                modes: list, traj: ModeTrajectories, x=None) -> EquilibriumSolution:
    """Aggregate, offset, mean and variance on the index grid ``x``.

    ``zeta`` is integrated backward per index and cross-checked against its
    eigenfunction expansion; the mean is integrated forward from ``m0``.
    """
    grid = eta.grid
    x = sg.grid if x is None else np.asarray(x, dtype=float)
    phi = sg.phi_grid if x is sg.grid else sg.eigenfunctions(x)
    Zhat = traj.z.combine(phi)
    zeta_spec = traj.v.combine(phi)
    g11, g12, g22, gz1, gz2 = (float(v) for v in (gm.g11, gm.g12, gm.g22, gm.gz1, gm.gz2))

    def zrhs(t, y):
        e = eta(t)
        return (g22 - g12 * e) * y + (gz2 - gz1 * e) * Zhat(t)

    zeta = rk4(zrhs, float(gm.gt2) * Zhat.values[-1], grid, backward=True, what="offset").path

    def mrhs(t, y):
        return (g11 + g12 * eta(t)) * y + g12 * zeta(t) + gz1 * Zhat(t)

    mean = rk4(mrhs, np.full(len(x), float(coeffs.m0)), grid, what="mean").path

    def vrhs(t, y):
        return 2.0 * (g11 + g12 * eta(t)) * y + 1.0

    var = rk4(vrhs, float(coeffs.v0), grid, what="variance").path
    diag = {
        "zeta_expansion_gap": float(np.max(np.abs(zeta.values - zeta_spec.values))),
        "mode_fb_residual": traj.fb_residual,
    }
    return EquilibriumSolution(coeffs, gm, sg, eta, modes, traj, x, Zhat, zeta, mean, var, diag)


# --- grid fixed point -----------------------------------------------------------------------


@dataclass
class OracleResult:
    x: np.ndarray
    Zhat: GridPath
    zeta: GridPath
    mean: GridPath
    iterations: int
    history: list
    method: str


def cell_weights(kernel: GraphonKernel, M: int, order: int = 4) -> np.ndarray:
    """``W[i, j] = int_{cell j} w(x_i, y) dy`` at cell midpoints ``x_i``.

    Each cell is split at its midpoint (where kernels with a diagonal kink
    have it) and each half is integrated with Gauss-Legendre of ``order``
    points.  Multiplying by midpoint values of a smooth ``m`` is then second
    order even for kernels that are not smooth at the boundary.
    """
    x = midpoint_grid(M)
    xg, wg = np.polynomial.legendre.leggauss(order)
    h = 0.5 / M
    left = np.arange(M)[:, None] / M
    nodes = np.concatenate([left + 0.5 * h * (xg + 1), left + h + 0.5 * h * (xg + 1)], axis=1)
    weights = np.concatenate([wg, wg]) * 0.5 * h
    vals = kernel(x[:, None, None], np.clip(nodes, 0.0, 1.0)[None, :, :])
    return vals @ weights


def fixed_point_oracle(coeffs: GameCoefficients, gm: GammaMatrices, eta: RiccatiSolution,
                       kernel: GraphonKernel, M: int = 200, tol: float = 1e-8, max_iter: int = 200,
                       accelerate: bool = True) -> OracleResult:
    """Fixed point of the aggregate map on the index grid.

    Given a candidate surface ``Zhat``, solve the offset backward and the mean
    forward at each grid index, then set ``Zhat <- W m`` with ``W`` from
    :func:`cell_weights`.  No eigendecomposition is used.

    The map is affine.  With ``accelerate`` the plain iteration is replaced
    after a few steps by Anderson mixing on the same map, which keeps the
    fixed point unchanged but avoids slow geometric convergence on long
    horizons.  Raises :class:`OracleFailure` with the residual history when
    ``tol`` is not reached within ``max_iter`` map evaluations.
    """
    grid = eta.grid
    x = midpoint_grid(M)
    W = cell_weights(kernel, M)
    g11, g12, g22, gz1, gz2 = (float(v) for v in (gm.g11, gm.g12, gm.g22, gm.gz1, gm.gz2))
    m0 = float(coeffs.m0)

    def apply(Zv, Zd):
        Z = GridPath(grid, Zv, Zd)

        def zrhs(t, y):
            e = eta(t)
            return (g22 - g12 * e) * y + (gz2 - gz1 * e) * Z(t)

        zeta = rk4(zrhs, float(gm.gt2) * Zv[-1], grid, backward=True, what="oracle offset").path

        def mrhs(t, y):
            return (g11 + g12 * eta(t)) * y + g12 * zeta(t) + gz1 * Z(t)

        mean = rk4(mrhs, np.full(M, m0), grid, what="oracle mean").path
        return mean.values @ W.T, mean.derivs @ W.T, zeta, mean

    n = grid.n_steps + 1
    Zv = np.zeros((n, M))
    Zd = np.zeros((n, M))
    hist = []
    # Anderson mixing on the stacked (values, derivatives) vector
    depth = 6
    X_hist, G_hist = [], []
    method = "picard"
    for it in range(1, max_iter + 1):
        Gv, Gd, zeta, mean = apply(Zv, Zd)
        change = float(np.max(np.abs(Gv - Zv)))
        hist.append(change)
        if change < tol:
            return OracleResult(x, GridPath(grid, Gv, Gd), zeta, mean, it, hist, method)
        if not np.isfinite(change):
            break
        xk = np.concatenate([Zv.ravel(), Zd.ravel()])
        gk = np.concatenate([Gv.ravel(), Gd.ravel()])
        fk = gk - xk
        if accelerate and it >= 3:
            method = "anderson"
            X_hist.append(xk)
            G_hist.append(gk)
            if len(X_hist) > depth + 1:
                X_hist.pop(0)
                G_hist.pop(0)
            if len(X_hist) >= 2:
                F = np.stack([g - xx for g, xx in zip(G_hist, X_hist)], axis=1)
                dF = F[:, 1:] - F[:, :-1]
                dG = np.stack(G_hist, axis=1)[:, 1:] - np.stack(G_hist, axis=1)[:, :-1]
                gamma, *_ = np.linalg.lstsq(dF, fk, rcond=None)
                nxt = gk - dG @ gamma
            else:
                nxt = gk
        else:
            nxt = gk
        Zv = nxt[: n * M].reshape(n, M)
        Zd = nxt[n * M:].reshape(n, M)
    raise OracleFailure(f"fixed-point iteration did not reach tol {tol:g} in {max_iter} steps",
                        {"history": hist})


# --- full pipeline --------------------------------------------------------------------------


def solve_equilibrium(coeffs: GameCoefficients, kernel: GraphonKernel | SpectralGraphon, n_modes: int = 1,
                      grid_size: int = 200, n_steps: int = 2000, gamma_z2_literal: bool = False,
                      riccati_literal: bool = False, blowup_cap: float = DEFAULT_BLOWUP_CAP,
                      max_truncation_residual: float | None = None, cross_check: bool = True,
                      x=None) -> EquilibriumSolution:
    """Slope equation, mode Riccati equations, mode trajectories and
    reconstruction on the index grid."""
    t0 = time.perf_counter()
    gm = assemble_gamma(coeffs, gamma_z2_literal)
    sg = kernel if isinstance(kernel, SpectralGraphon) else decompose(kernel, n_modes, grid_size)
    if max_truncation_residual is not None and sg.truncation_residual > max_truncation_residual:
        raise NumericalError(
            f"truncation residual {sg.truncation_residual:.3g} exceeds {max_truncation_residual:.3g}",
            {"n_modes": sg.n_modes, "residual": sg.truncation_residual})
    eta = solve_eta(gm, coeffs.T, n_steps=n_steps, literal=riccati_literal, blowup_cap=blowup_cap)
    modes = solve_all_modes(gm, eta, sg.eigenvalues, blowup_cap=blowup_cap, cross_check=cross_check)
    traj = solve_modes(gm, eta, modes, project_initial(sg, coeffs.m0))
    sol = reconstruct(coeffs, gm, eta, sg, modes, traj, x)
    discs = [m.discrepancy for m in modes if m.discrepancy is not None]
    sol.diagnostics.update({
        "n_modes": sg.n_modes,
        "truncation_residual": sg.truncation_residual,
        "eta_error_estimate": eta.error_estimate,
        "max_mode_discrepancy": max(discs) if discs else None,
        "methods": sorted({m.method for m in modes}),
        "elapsed": time.perf_counter() - t0,
    })
    return sol
