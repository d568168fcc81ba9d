"""Scalar Riccati equation for the feedback slope and per-mode Riccati
equations for the aggregate coupling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ModeIllPosedError, WellPosednessError
from .integrate import DEFAULT_BLOWUP_CAP, GridPath, TimeGrid, rk4
from .model import GammaMatrices, ModeConstants, forcing_sign, mode_constants

DEFAULT_STEPS = 2000


def _grid(T, dt=None, n_steps=None) -> TimeGrid:
    if isinstance(T, TimeGrid):
        return T
    if dt is not None:
        return TimeGrid.from_dt(T, dt)
    return TimeGrid(T, n_steps or DEFAULT_STEPS)


@dataclass
class RiccatiSolution:
    """Solution ``eta`` on a uniform grid; callable at any ``t`` (Hermite)."""

    path: GridPath
    method: str
    error_estimate: float | None
    literal: bool = False

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def derivs(self) -> np.ndarray:
        return self.path.derivs

    def __call__(self, t):
        return self.path(t)


def eta_rhs(gm: GammaMatrices, literal: bool = False):
    """Right-hand side of the slope equation.

    Matching the state terms of ``p = eta X + zeta`` in the Hamiltonian system
    gives the linear coefficient ``-(G11 - G22)``; ``literal`` adds ``-G21``.
    """
    q = -float(gm.g12)
    lin = -float(gm.g11 - gm.g22 + (gm.g21 if literal else 0.0))
    const = float(gm.g21)
    return lambda t, y: q * y * y + lin * y + const


def _eta_exact(gm: GammaMatrices, grid: TimeGrid, literal: bool):
    """Exact solution of the constant-coefficient slope equation.

    Writing ``eta = U / V`` turns ``eta' = q eta^2 + l eta + c`` into the linear
    system ``(U, V)' = [[l/2, c], [-q, -l/2]] (U, V)``, whose propagator is
    ``cosh(w s) I + sinh(w s) / w M`` with ``w^2 = l^2/4 - q c`` (circular
    functions when ``w^2 < 0``).  Returns ``None`` when the propagator would
    overflow so that the caller can fall back to RK4.
    """
    q = -float(gm.g12)
    lin = -float(gm.g11 - gm.g22 + (gm.g21 if literal else 0.0))
    c = float(gm.g21)
    w2 = 0.25 * lin * lin - q * c
    s = grid.t - grid.T
    if w2 > 0:
        w = np.sqrt(w2)
        if w * grid.T > 600:
            return None
        ch, sh = np.cosh(w * s), np.sinh(w * s) / w
    elif w2 < 0:
        w = np.sqrt(-w2)
        ch, sh = np.cos(w * s), np.sin(w * s) / w
    else:
        ch, sh = np.ones_like(s), s
    yT = float(gm.gt1)
    U = ch * yT + sh * (0.5 * lin * yT + c)
    V = ch + sh * (-q * yT - 0.5 * lin)
    return U, V, (q, lin, c)


def solve_eta(gm: GammaMatrices, T, dt: float | None = None, n_steps: int | None = None,
              literal: bool = False, blowup_cap: float = DEFAULT_BLOWUP_CAP,
              error_estimate: bool = True, method: str = "closed_form") -> RiccatiSolution:
    """Solve the slope equation backward from ``eta_T = Gamma_T1``.

    ``method="closed_form"`` evaluates the exact solution at the nodes and
    reports as ``error_estimate`` its max distance to a backward RK4 solve;
    ``method="rk4"`` uses RK4 with a step-halving estimate.  A sign change of
    the denominator, or ``|eta| > blowup_cap``, raises
    :class:`WellPosednessError` with the escape time.
    """
    grid = _grid(T, dt, n_steps)
    rhs = eta_rhs(gm, literal)

    def run_rk4(est):
        try:
            return rk4(rhs, float(gm.gt1), grid, backward=True, blowup_cap=blowup_cap,
                       error_estimate=est, what="eta Riccati")
        except BlowUpError as exc:
            raise WellPosednessError(str(exc), exc.escape_time, exc.diagnostics) from exc

    exact = _eta_exact(gm, grid, literal) if method == "closed_form" else None
    if exact is None:
        res = run_rk4(error_estimate)
        return RiccatiSolution(res.path, "rk4", res.error_estimate, literal)
    U, V, _ = exact
    flip = np.nonzero(np.sign(V[:-1]) != np.sign(V[1:]))[0]
    vals = U / np.where(V == 0, np.nan, V)
    bad = ~np.isfinite(vals) | (np.abs(vals) > blowup_cap)
    if flip.size or bad.any():
        i = int(flip.max()) if flip.size else int(np.nonzero(bad)[0].max())
        t_esc = float(grid.t[i])
        raise WellPosednessError(f"eta Riccati left |y| <= {blowup_cap:g} at t = {t_esc:.6g}", t_esc,
                                 {"method": "closed_form"})
    path = GridPath(grid, vals, rhs(None, vals))
    err = None
    if error_estimate:
        err = float(np.max(np.abs(run_rk4(False).path.values - vals)))
    return RiccatiSolution(path, "closed_form", err, literal)


# --- per-mode equation --------------------------------------------------------------------


def _b_path(gm, eta, lam):
    shift = 0.5 * float(gm.g11 - gm.g22 + gm.gz1 * lam)
    g12 = float(gm.g12)
    return GridPath(eta.grid, -g12 * eta.values - shift, -g12 * eta.derivs)


def _a_path(gm, eta):
    return GridPath(eta.grid, float(gm.gz2) - float(gm.gz1) * eta.values, -float(gm.gz1) * eta.derivs)


@dataclass
class ModeRiccati:
    """Per-mode Riccati solution ``pi`` together with its coefficients.

    ``A``, ``B`` are the time-dependent coefficient paths; the equation is
    ``pi' = C pi^2 + 2 B pi + s A`` with ``s = +1`` (``-1`` in literal mode).
    """

    k: int
    lam: float
    A: GridPath
    B: GridPath
    constants: ModeConstants
    path: GridPath
    method: str
    cross_method: str | None
    discrepancy: float | None
    literal: bool = False

    @property
    def C(self):
        return self.constants.C

    @property
    def D(self):
        return self.constants.D

    @property
    def F(self):
        return self.constants.F

    @property
    def grid(self):
        return self.path.grid

    @property
    def values(self):
        return self.path.values

    def rhs(self, t, pi):
        s = forcing_sign(self.literal)
        return self.C * pi * pi + 2.0 * self.B(t) * pi + s * self.A(t)

    def residual(self) -> float:
        """Max over interior nodes of the central-difference residual."""
        h = self.grid.dt
        v = self.path.values
        fd = (v[2:] - v[:-2]) / (2 * h)
        s = forcing_sign(self.literal)
        rhs = self.C * v * v + 2.0 * self.B.values * v + s * self.A.values
        return float(np.max(np.abs(fd - rhs[1:-1])))

    def d_two_way(self, n_points: int = 7) -> float:
        """Max deviation of ``B^2 - s C A - B'`` along the path from the constant ``D``."""
        idx = np.linspace(0, self.grid.n_steps, n_points).astype(int)
        s = forcing_sign(self.literal)
        d_t = self.B.values[idx] ** 2 - s * self.C * self.A.values[idx] - self.B.derivs[idx]
        return float(np.max(np.abs(d_t - self.D)))


def _closed_form(mc: ModeConstants, B: GridPath, grid: TimeGrid) -> GridPath:
    tau = grid.T - grid.t
    L = mc.log_nu_dot(tau)
    return (L - B.values) / mc.C


def _linear_ode(gm, B: GridPath, A: GridPath, literal: bool, grid: TimeGrid) -> np.ndarray:
    """Integrating-factor solution of ``pi' = 2 B pi + s A`` with ``pi_T = Gamma_T2``.

    ``Phi(t) = int_0^t 2 B`` is exact for the Hermite interpolant of ``B``;
    the forcing integral uses 5-point Gauss-Legendre per step.
    """
    s = forcing_sign(literal)
    h = grid.dt
    t = grid.t
    phi_nodes = 2.0 * B.integral()
    xg, wg = np.polynomial.legendre.leggauss(5)
    # per-step forcing integral int_{t_i}^{t_{i+1}} A(u) exp(Phi(t_{i+1}) - Phi(u)) du
    u = t[:-1, None] + 0.5 * h * (xg[None, :] + 1.0)
    phi_u = 2.0 * B.integral_at(u.ravel()).reshape(u.shape)
    a_u = A.at(u.ravel()).reshape(u.shape)
    step_int = 0.5 * h * np.sum(wg * a_u * np.exp(phi_nodes[1:, None] - phi_u), axis=1)
    growth = np.exp(phi_nodes[:-1] - phi_nodes[1:])
    vals = np.empty(grid.n_steps + 1)
    vals[-1] = float(gm.gt2)
    for i in range(grid.n_steps - 1, -1, -1):
        vals[i] = growth[i] * (vals[i + 1] - s * step_int[i])
    return vals


def _rk4_batch(C, B: GridPath, A: GridPath, literal, gm, grid, blowup_cap):
    """Backward RK4 of all mode equations at once; ``C`` and ``B`` are per mode."""
    s = forcing_sign(literal)

    def rhs(t, y):
        return C * y * y + 2.0 * B(t) * y + s * A(t)

    y0 = np.full(len(C), float(gm.gt2))
    return rk4(rhs, y0, grid, backward=True, blowup_cap=blowup_cap, what="mode Riccati").path


def _rk4_modes(C, B, A, literal, gm, grid, blowup_cap, ks, lams):
    try:
        return _rk4_batch(C, B, A, literal, gm, grid, blowup_cap).values
    except BlowUpError:
        pass
    # locate the offending mode(s)
    cols = []
    for j in range(len(C)):
        Bj = GridPath(grid, B.values[:, j:j + 1], B.derivs[:, j:j + 1])
        try:
            cols.append(_rk4_batch(C[j:j + 1], Bj, A, literal, gm, grid, blowup_cap).values[:, 0])
        except BlowUpError as exc:
            raise ModeIllPosedError(f"mode {ks[j]} (lambda = {lams[j]:g}): {exc}", mode=ks[j],
                                    escape_time=exc.escape_time, diagnostics=exc.diagnostics) from exc
    return np.stack(cols, axis=1)


def solve_all_modes(gm: GammaMatrices, eta: RiccatiSolution, eigenvalues, literal: bool | None = None,
                    blowup_cap: float = DEFAULT_BLOWUP_CAP, cross_check: bool = True,
                    ks=None) -> list[ModeRiccati]:
    """Solve the Riccati equation of every eigendirection.

    Method selection per mode: ``lambda = 0`` gives a linear equation solved
    by an integrating factor; otherwise the closed form is used when
    ``D >= 0`` and ``nu`` has no zero on the horizon; RK4 is the fallback.  In
    literal mode the constant ``D`` does not solve the equation, so RK4 is
    primary and the closed form is only reported as a cross-check.  RK4 runs
    for all modes in one vectorised sweep.
    """
    if literal is None:
        literal = eta.literal
    lams = [float(v) for v in np.atleast_1d(eigenvalues)]
    ks = list(ks) if ks is not None else list(range(1, len(lams) + 1))
    if not lams:
        return []
    grid = eta.grid
    T = grid.T
    s = forcing_sign(literal)
    A = _a_path(gm, eta)
    Bs = [_b_path(gm, eta, lam) for lam in lams]
    mcs = [mode_constants(gm, float(eta.values[-1]), lam, literal) for lam in lams]
    cf_ok = [mc.C != 0 and mc.D >= 0 and mc.root(T) is None for mc in mcs]
    linear = [mc.C == 0 for mc in mcs]
    rk4_primary = [not lin and (literal or not ok) for lin, ok in zip(linear, cf_ok)]
    need_rk4 = [p or cross_check for p in rk4_primary]

    rk4_vals = {}
    idx = [j for j, n in enumerate(need_rk4) if n]
    if idx:
        C = np.array([mcs[j].C for j in idx])
        Bb = GridPath(grid, np.stack([Bs[j].values for j in idx], axis=1),
                      np.stack([Bs[j].derivs for j in idx], axis=1))
        try:
            vals = _rk4_modes(C, Bb, A, literal, gm, grid, blowup_cap,
                              [ks[j] for j in idx], [lams[j] for j in idx])
            rk4_vals = {j: vals[:, c] for c, j in enumerate(idx)}
        except ModeIllPosedError as exc:
            j = ks.index(exc.mode)
            if rk4_primary[j]:
                raise
            # closed form exists for every failing mode: retry the others one by one
            for j in idx:
                Bj = GridPath(grid, Bs[j].values[:, None], Bs[j].derivs[:, None])
                try:
                    rk4_vals[j] = _rk4_batch(np.array([mcs[j].C]), Bj, A, literal, gm, grid,
                                             blowup_cap).values[:, 0]
                except BlowUpError:
                    if rk4_primary[j]:
                        raise
                    rk4_vals[j] = None

    out = []
    for j, (lam, mc, B) in enumerate(zip(lams, mcs, Bs)):
        def as_path(vals, mc=mc, B=B):
            vals = np.array(vals, dtype=float)
            vals[-1] = float(gm.gt2)
            return GridPath(grid, vals, mc.C * vals * vals + 2.0 * B.values * vals + s * A.values)

        alt = None
        if linear[j]:
            main, method = as_path(_linear_ode(gm, B, A, literal, grid)), "linear_ode"
            alt, cross = rk4_vals.get(j), "rk4"
        elif not rk4_primary[j]:
            main, method = as_path(_closed_form(mc, B, grid)), "closed_form"
            alt, cross = rk4_vals.get(j), "rk4"
        else:
            main, method = as_path(rk4_vals[j]), "rk4"
            cross = "closed_form" if cf_ok[j] else None
            if cf_ok[j] and cross_check:
                alt = _closed_form(mc, B, grid)
        disc = float(np.max(np.abs(alt - main.values))) if alt is not None else None
        out.append(ModeRiccati(ks[j], lam, A, B, mc, main, method, cross if alt is not None else None,
                               disc, literal))
    return out


def solve_pi(gm: GammaMatrices, eta: RiccatiSolution, lam: float, k: int = 1,
             literal: bool | None = None, blowup_cap: float = DEFAULT_BLOWUP_CAP,
             cross_check: bool = True) -> ModeRiccati:
    """Solve the Riccati equation of a single eigendirection (see :func:`solve_all_modes`)."""
    return solve_all_modes(gm, eta, [lam], literal, blowup_cap, cross_check, ks=[k])[0]


def scalar_lq_value(a, b, q, r, qT, T, m0, v0, cross=0.0, n_steps=DEFAULT_STEPS):
    """Optimal cost of ``min E[int (q X^2 + 2 cross X u + r u^2)/2 + qT X_T^2 / 2]``
    with ``dX = (a X + b u) dt + dB``, ``X_0 ~ N(m0, v0)``.

    Value ``P_0 (m0^2 + v0) / 2 + c_0`` where
    ``-P' = 2 a P + q - (b P + cross)^2 / r`` and ``-c' = P / 2``.
    """
    grid = TimeGrid(T, n_steps)

    def rhs(t, y):
        P = y[0]
        return np.array([-(2 * a * P + q - (b * P + cross) ** 2 / r), -0.5 * P])

    path = rk4(rhs, np.array([qT, 0.0]), grid, backward=True, what="scalar LQ Riccati").path
    P0, c0 = path.values[0]
    return 0.5 * P0 * (m0 * m0 + v0) + c0


__all__ = ["RiccatiSolution", "ModeRiccati", "solve_eta", "solve_pi", "solve_all_modes",
           "eta_rhs", "scalar_lq_value"]
