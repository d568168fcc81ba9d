"""Game primitives, the coefficient matrices of the Hamiltonian system, and
well-posedness diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AssumptionViolation, BlowUpError, ModeIllPosedError
from .integrate import DEFAULT_BLOWUP_CAP


def _sym(m, shape, name):
    m = np.array(m, dtype=float)
    if m.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    m = 0.5 * (m + m.T)
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class GameCoefficients:
    """Constant model coefficients.

    ``C_f`` acts on (state, control, aggregate) and ``C_h`` on (terminal state,
    terminal aggregate).  The initial law is Gaussian with mean ``m0`` and
    variance ``v0``.  The positivity of ``C_f[1, 1]`` is checked where it is
    needed so that invalid models can still be loaded and reported on.
    """

    a: float
    b: float
    c: float
    C_f: np.ndarray
    C_h: np.ndarray
    T: float
    m0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "C_f", _sym(self.C_f, (3, 3), "C_f"))
        object.__setattr__(self, "C_h", _sym(self.C_h, (2, 2), "C_h"))
        if not self.T > 0:
            raise ValueError(f"time horizon must be positive, got {self.T}")
        if not self.v0 >= 0:
            raise ValueError(f"initial variance must be non-negative, got {self.v0}")

    @classmethod
    def benchmark(cls, T: float = 3.0, m0: float = 8.0, v0: float = 0.25) -> "GameCoefficients":
        """Running cost (alpha^2 + (X - Z)^2) / 2, terminal (X - Z)^2 / 2,
        drift -X + alpha + Z, initial law Normal(8, 1/4)."""
        C_f = [[1.0, 0.0, -1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]
        C_h = [[1.0, -1.0], [-1.0, 1.0]]
        return cls(-1.0, 1.0, 1.0, C_f, C_h, T, m0, v0)

    def replace(self, **changes) -> "GameCoefficients":
        d = dict(a=self.a, b=self.b, c=self.c, C_f=self.C_f, C_h=self.C_h,
                 T=self.T, m0=self.m0, v0=self.v0)
        d.update(changes)
        return GameCoefficients(**d)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "C_f": self.C_f.tolist(),
                "C_h": self.C_h.tolist(), "T": self.T, "m0": self.m0, "v0": self.v0}

    @property
    def decoupled(self) -> bool:
        """No dependence of dynamics or costs on the aggregate."""
        Cf, Ch = self.C_f, self.C_h
        return self.c == 0 and Cf[0, 2] == 0 and Cf[1, 2] == 0 and Cf[2, 2] == 0 \
            and Ch[0, 1] == 0 and Ch[1, 1] == 0


@dataclass(frozen=True, eq=False)
class GammaMatrices:
    gamma: np.ndarray      # 2x2 drift of (state, costate)
    gamma_z: np.ndarray    # aggregate loading of (state, costate)
    gamma_t: np.ndarray    # terminal costate = gamma_t . (X_T, Z_T)

    @property
    def g11(self):
        return self.gamma[0, 0]

    @property
    def g12(self):
        return self.gamma[0, 1]

    @property
    def g21(self):
        return self.gamma[1, 0]

    @property
    def g22(self):
        return self.gamma[1, 1]

    @property
    def gz1(self):
        return self.gamma_z[0]

    @property
    def gz2(self):
        return self.gamma_z[1]

    @property
    def gt1(self):
        return self.gamma_t[0]

    @property
    def gt2(self):
        return self.gamma_t[1]

    def to_dict(self):
        return {"gamma": self.gamma.tolist(), "gamma_z": self.gamma_z.tolist(),
                "gamma_t": self.gamma_t.tolist()}


def assemble_gamma(coeffs: GameCoefficients, gamma_z2_literal: bool = False) -> GammaMatrices:
    """Coefficients of the linear forward-backward system obtained by plugging
    the minimiser of the Hamiltonian into the state and adjoint equations.

    ``gamma_z2_literal`` swaps the costate aggregate loading for the
    alternative ``C12 C23 / C22 - C12`` form (kept for reproduction only).
    """
    Cf, Ch = coeffs.C_f, coeffs.C_h
    r = Cf[1, 1]
    if not r > 0:
        raise AssumptionViolation(f"control cost C_f[2,2] must be positive, got {r}")
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    g11 = a - b * Cf[0, 1] / r
    gamma = np.array([
        [g11, -b * b / r],
        [Cf[0, 1] ** 2 / r - Cf[0, 0], -g11],
    ])
    if gamma_z2_literal:
        gz2 = Cf[0, 1] * Cf[2, 1] / r - Cf[0, 1]
    else:
        gz2 = Cf[0, 1] * Cf[1, 2] / r - Cf[0, 2]
    gamma_z = np.array([c - b * Cf[1, 2] / r, gz2])
    gamma_t = np.array([Ch[0, 0], Ch[0, 1]])
    return GammaMatrices(gamma, gamma_z, gamma_t)


@dataclass
class ValidationReport:
    literal: dict = field(default_factory=dict)
    numerical_ok: bool = False
    escape_time: float | None = None
    eta0: float | None = None
    warnings: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def literal_ok(self) -> bool:
        return all(item["passed"] for item in self.literal.values())

    @property
    def well_posed(self) -> bool:
        """Hard requirements hold and the scalar Riccati stays finite."""
        return not self.errors and self.numerical_ok

    @property
    def status(self) -> str:
        if not self.well_posed:
            return "ill-posed"
        return "well-posed" if self.literal_ok else "numerically well-posed"

    def to_dict(self):
        return {"status": self.status, "literal_ok": self.literal_ok, "numerical_ok": self.numerical_ok,
                "escape_time": self.escape_time, "eta0": self.eta0, "literal": self.literal,
                "warnings": self.warnings, "errors": self.errors}


def check_assumptions(coeffs: GameCoefficients, gm: GammaMatrices | None = None, n_steps: int = 2000,
                      blowup_cap: float = DEFAULT_BLOWUP_CAP, riccati_literal: bool = False) -> ValidationReport:
    """Evaluate the four standing conditions literally and check numerically
    that the scalar Riccati equation has a finite solution on ``[0, T]``.

    Failed literal conditions are downgraded to warnings when the numerical
    check passes; a non-positive control cost is always an error.
    """
    from .riccati import solve_eta

    rep = ValidationReport()
    Cf, Ch = coeffs.C_f, coeffs.C_h
    r = float(Cf[1, 1])
    rep.literal["iv"] = {"condition": "C_f[2,2] > 0", "value": r, "passed": r > 0}
    if r <= 0:
        rep.errors.append("control cost C_f[2,2] is not positive; the Hamiltonian has no minimiser")
        for key, cond in (("i", "Gamma_12 != 0"), ("ii", "-C_h[1,1] Gamma_12 >= 0"),
                          ("iii", "-Gamma_12 Gamma_21 > 0")):
            rep.literal[key] = {"condition": cond, "value": None, "passed": False}
        return rep
    if gm is None:
        gm = assemble_gamma(coeffs)
    g12, g21 = float(gm.g12), float(gm.g21)
    v2 = -float(Ch[0, 0]) * g12
    v3 = -g12 * g21
    rep.literal["i"] = {"condition": "Gamma_12 != 0", "value": g12, "passed": g12 != 0}
    rep.literal["ii"] = {"condition": "-C_h[1,1] Gamma_12 >= 0", "value": v2, "passed": v2 >= 0}
    rep.literal["iii"] = {"condition": "-Gamma_12 Gamma_21 > 0", "value": v3, "passed": v3 > 0}
    rep.literal = dict(sorted(rep.literal.items(), key=lambda kv: ["i", "ii", "iii", "iv"].index(kv[0])))
    try:
        eta = solve_eta(gm, coeffs.T, n_steps=n_steps, blowup_cap=blowup_cap, literal=riccati_literal)
        rep.numerical_ok = True
        rep.eta0 = float(eta.values[0])
    except BlowUpError as exc:
        rep.numerical_ok = False
        rep.escape_time = exc.escape_time
        rep.errors.append(f"scalar Riccati blows up at t = {exc.escape_time:.6g}")
    for key, item in rep.literal.items():
        if not item["passed"]:
            msg = f"literal condition ({key}) {item['condition']} fails (value {item['value']})"
            (rep.warnings if rep.numerical_ok else rep.errors).append(msg)
    return rep


# --- per-mode constants -------------------------------------------------------------------


@dataclass(frozen=True)
class ModeConstants:
    """Constants of the linearised per-mode Riccati equation.

    With ``B' = B_T + C * Gamma_T2`` and ``r = sqrt(D)`` the second-order
    linear equation ``nu'' = D nu`` with mixed initial condition
    ``nu_0 B' = nu'_0`` has solution ``nu_t = (B' + r) e^{r t} + (r - B') e^{-r t}``
    (``1 + B' t`` when ``D = 0``).  ``F = (B' + r) / (B' - r)`` is infinite
    when the denominator vanishes.
    """

    lam: float
    B_T: float
    C: float
    D: float
    F: float
    b_prime: float
    literal: bool = False

    @property
    def sqrt_d(self) -> float:
        return math.sqrt(self.D) if self.D >= 0 else float("nan")

    def nu(self, tau):
        tau = np.asarray(tau, dtype=float)
        r = self.sqrt_d
        if self.D == 0:
            return 1.0 + self.b_prime * tau
        return (self.b_prime + r) * np.exp(r * tau) + (r - self.b_prime) * np.exp(-r * tau)

    def log_nu_dot(self, tau):
        """``nu'(tau) / nu(tau)`` evaluated without overflow."""
        tau = np.asarray(tau, dtype=float)
        bp = self.b_prime
        if self.D == 0:
            return bp / (1.0 + bp * tau)
        r = self.sqrt_d
        c1, c2 = bp + r, r - bp
        e = np.exp(-2.0 * r * tau)
        return r * (c1 - c2 * e) / (c1 + c2 * e)

    def root(self, T: float) -> float | None:
        """Smallest zero of ``nu`` in ``[0, T]``, or ``None``."""
        bp = self.b_prime
        if self.D < 0:
            return None
        if self.D == 0:
            if bp == 0:
                return None
            tau = -1.0 / bp
            return tau if 0 <= tau <= T else None
        r = self.sqrt_d
        c1, c2 = bp + r, r - bp
        if c2 == 0 or c1 == 0:
            return None
        ratio = -c1 / c2
        if ratio <= 0:
            return None
        tau = -math.log(ratio) / (2 * r)
        return tau if 0 <= tau <= T else None

    def to_dict(self):
        d = asdict(self)
        d["sqrt_D"] = self.sqrt_d
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def forcing_sign(literal: bool) -> float:
    """Sign of ``A_t`` in the per-mode Riccati equation."""
    return -1.0 if literal else 1.0


def d_constant(gm: GammaMatrices, lam: float, literal: bool = False) -> float:
    """Time-independent discriminant of the per-mode Riccati equation."""
    s = forcing_sign(literal)
    return float(0.25 * (gm.g11 - gm.g22 + gm.gz1 * lam) ** 2
                 + s * gm.g12 * lam * gm.gz2 + gm.g12 * gm.g21)


def mode_constants(gm: GammaMatrices, eta_T: float, lam: float, literal: bool = False) -> ModeConstants:
    B_T = float(-gm.g12 * eta_T - 0.5 * (gm.g11 - gm.g22 + gm.gz1 * lam))
    C = float(-gm.g12 * lam)
    D = d_constant(gm, lam, literal)
    bp = B_T + C * float(gm.gt2)
    if D >= 0:
        r = math.sqrt(D)
        den = bp - r
        F = (bp + r) / den if den != 0 else math.copysign(math.inf, bp + r) if bp + r != 0 else math.nan
    else:
        F = math.nan
    return ModeConstants(float(lam), B_T, C, D, F, bp, literal)


def sufficient_condition(gm: GammaMatrices, literal: bool = False) -> dict:
    """Lambda-independent sufficient condition for a non-negative discriminant.

    Completing the square in ``lambda`` gives ``D = (u + Gz1 lam / 2)^2 - u^2
    + G11^2 + G12 G21`` with ``u = G11 + s G12 Gz2 / Gz1``; hence ``D >= 0``
    for every eigenvalue as soon as ``G11^2 + G12 G21 >= u^2``.
    """
    if gm.gz1 == 0:
        return {"applicable": False, "holds": None, "lhs": None, "rhs": None}
    s = forcing_sign(literal)
    u = gm.g11 + s * gm.g12 * gm.gz2 / gm.gz1
    lhs = float(gm.g11 ** 2)
    rhs = float(u ** 2 - gm.g12 * gm.g21)
    return {"applicable": True, "holds": lhs >= rhs, "lhs": lhs, "rhs": rhs}


@dataclass
class ModeReport:
    constants: ModeConstants
    closed_form_available: bool
    root: float | None
    well_posed: bool | None
    sufficient: dict
    note: str = ""

    def to_dict(self):
        return {"constants": self.constants.to_dict(), "closed_form_available": self.closed_form_available,
                "root": self.root, "well_posed": self.well_posed, "sufficient": self.sufficient,
                "note": self.note}


def check_mode_wellposedness(gm: GammaMatrices, eta, lam: float, literal: bool = False) -> ModeReport:
    """Closed-form solvability of the Riccati equation of one eigendirection.

    ``eta`` is the solved scalar Riccati path (only its terminal value and
    horizon are used).  ``well_posed`` is ``None`` when ``D < 0``: the closed
    form is then unavailable and only a numerical solve can decide.  A zero
    of ``nu`` on the horizon raises :class:`ModeIllPosedError`.
    """
    T = eta.grid.T
    mc = mode_constants(gm, float(eta.values[-1]), lam, literal)
    suff = sufficient_condition(gm, literal)
    if mc.C == 0:
        return ModeReport(mc, True, None, True, suff, "zero eigenvalue: linear equation")
    if mc.D < 0:
        return ModeReport(mc, False, None, None, suff, "negative discriminant: closed form unavailable")
    root = mc.root(T)
    note = ""
    if math.isinf(mc.F):
        note = "F denominator vanishes: nu proportional to exp(sqrt(D) t)"
    elif mc.F == 0:
        note = "F vanishes: nu proportional to -exp(-sqrt(D) t)"
    report = ModeReport(mc, True, root, root is None, suff, note)
    if root is not None:
        raise ModeIllPosedError(
            f"nu vanishes at tau = {root:.6g} (t = {T - root:.6g}) for lambda = {lam:g}",
            escape_time=T - root, diagnostics=report.to_dict())
    return report
