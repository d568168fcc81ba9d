"""Fixed-step RK4 integration on uniform time grids.

Every solution produced here is stored as a :class:`GridPath`: node values plus
node derivatives.  Cubic Hermite interpolation between nodes is fourth-order
accurate, which lets a downstream RK4 step read its inputs at the half-step
stage times without degrading the global order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError

DEFAULT_BLOWUP_CAP = 1e8


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * T / n_steps`` on ``[0, T]``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        n = T / dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T/dt must be an integer (T={T}, dt={dt})")
        return cls(T, int(round(n)))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * factor)


class GridPath:
    """Values ``y(t_i)`` and derivatives ``y'(t_i)`` on a :class:`TimeGrid`.

    Calling the path at an arbitrary time evaluates the piecewise cubic Hermite
    interpolant.  Nodes and interval midpoints are served from cached arrays so
    the RK4 driver does not pay for interpolation in its inner loop.
    """

    def __init__(self, grid: TimeGrid, values, derivs):
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        if values.shape != derivs.shape or values.shape[0] != grid.n_steps + 1:
            raise ValueError(
                f"values {values.shape} and derivs {derivs.shape} do not match grid "
                f"with {grid.n_steps + 1} nodes"
            )
        self.grid = grid
        self.values = values
        self.derivs = derivs
        self._mid = None

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def midpoints(self) -> np.ndarray:
        if self._mid is None:
            h = self.grid.dt
            v, d = self.values, self.derivs
            self._mid = 0.5 * (v[:-1] + v[1:]) + (h / 8.0) * (d[:-1] - d[1:])
        return self._mid

    def __call__(self, t: float) -> np.ndarray:
        h = self.grid.dt
        u = t / h
        n = self.grid.n_steps
        u2 = 2.0 * u
        j = round(u2)
        if abs(u2 - j) < 1e-9 and 0 <= j <= 2 * n:
            if j % 2 == 0:
                return self.values[j // 2]
            return self.midpoints[j // 2]
        return self.at(np.asarray([t]))[0]

    def at(self, times) -> np.ndarray:
        """Vectorised Hermite evaluation; ``times`` outside the grid are clamped."""
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.grid.T)
        h = self.grid.dt
        i = np.minimum((times / h).astype(int), self.grid.n_steps - 1)
        s = times / h - i
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        extra = (slice(None),) + (None,) * (self.values.ndim - 1)
        v, d = self.values, self.derivs
        return (
            h00[extra] * v[i]
            + (h * h10)[extra] * d[i]
            + h01[extra] * v[i + 1]
            + (h * h11)[extra] * d[i + 1]
        )

    def linear(self, times) -> np.ndarray:
        """Piecewise-linear interpolation between nodes."""
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.grid.T)
        h = self.grid.dt
        i = np.minimum((times / h).astype(int), self.grid.n_steps - 1)
        s = times / h - i
        extra = (slice(None),) + (None,) * (self.values.ndim - 1)
        return (1 - s)[extra] * self.values[i] + s[extra] * self.values[i + 1]

    def resample(self, grid: TimeGrid) -> np.ndarray:
        """Node values of this path on another grid over the same horizon."""
        if abs(grid.T - self.grid.T) > 1e-12 * self.grid.T:
            raise ValueError("grids cover different horizons")
        if grid.n_steps == self.grid.n_steps:
            return self.values
        if self.grid.n_steps % grid.n_steps == 0:
            return self.values[:: self.grid.n_steps // grid.n_steps]
        return self.at(grid.t)

    def combine(self, weights) -> "GridPath":
        """Linear combination over the leading value axis: ``sum_k w[k, ...] y_k``."""
        w = np.asarray(weights, dtype=float)
        return GridPath(
            self.grid,
            np.tensordot(self.values, w, axes=([1], [0])),
            np.tensordot(self.derivs, w, axes=([1], [0])),
        )

    def integral(self) -> np.ndarray:
        """Cumulative integral from 0, exact for the Hermite interpolant."""
        h = self.grid.dt
        v, d = self.values, self.derivs
        pieces = 0.5 * h * (v[:-1] + v[1:]) + (h * h / 12.0) * (d[:-1] - d[1:])
        out = np.zeros_like(v)
        out[1:] = np.cumsum(pieces, axis=0)
        return out

    def integral_at(self, times) -> np.ndarray:
        """Integral of the Hermite interpolant from 0 to each of ``times``."""
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.grid.T)
        h = self.grid.dt
        cum = self.integral()
        i = np.minimum((times / h).astype(int), self.grid.n_steps - 1)
        s = times / h - i
        s2, s3, s4 = s * s, s ** 3, s ** 4
        q00 = s4 / 2 - s3 + s
        q10 = s4 / 4 - 2 * s3 / 3 + s2 / 2
        q01 = -s4 / 2 + s3
        q11 = s4 / 4 - s3 / 3
        extra = (slice(None),) + (None,) * (self.values.ndim - 1)
        v, d = self.values, self.derivs
        return cum[i] + h * (
            q00[extra] * v[i] + (h * q10)[extra] * d[i]
            + q01[extra] * v[i + 1] + (h * q11)[extra] * d[i + 1]
        )


def constant_path(grid: TimeGrid, value) -> GridPath:
    value = np.asarray(value, dtype=float)
    vals = np.broadcast_to(value, (grid.n_steps + 1,) + value.shape).copy()
    return GridPath(grid, vals, np.zeros_like(vals))


@dataclass
class RK4Result:
    path: GridPath
    error_estimate: float | None = None


def rk4(rhs, y0, grid: TimeGrid, backward: bool = False, blowup_cap: float = DEFAULT_BLOWUP_CAP,
        record=None, error_estimate: bool = False, what: str = "ODE") -> RK4Result:
    """Integrate ``y' = rhs(t, y)`` with classic RK4 on ``grid``.

    With ``backward=True`` the value ``y0`` is imposed at ``t = T`` and the
    equation is stepped towards ``t = 0``; results are always stored in
    increasing time order.

    ``record(i, t, y, dy)`` is called at every node instead of storing the
    full state (used for tensor-valued equations).  When ``record`` is given
    the returned path is ``None``.

    Raises :class:`BlowUpError` as soon as ``max|y|`` exceeds ``blowup_cap``
    or becomes non-finite, carrying the escape time.
    """
    y = np.array(y0, dtype=float)
    n = grid.n_steps
    h = grid.dt
    ts = grid.t
    order = range(n, 0, -1) if backward else range(n)
    step = -h if backward else h
    store = record is None
    if error_estimate and not store:
        raise ValueError("error_estimate needs stored node values")
    if store:
        values = np.empty((n + 1,) + y.shape)
        derivs = np.empty_like(values)

    def emit(i, y, dy):
        if store:
            values[i] = y
            derivs[i] = dy
        else:
            record(i, ts[i], y, dy)

    i0 = n if backward else 0
    k1 = np.asarray(rhs(ts[i0], y), dtype=float)
    emit(i0, y, k1)
    for i in order:
        t = ts[i]
        k2 = rhs(t + 0.5 * step, y + 0.5 * step * k1)
        k3 = rhs(t + 0.5 * step, y + 0.5 * step * k2)
        inext = i - 1 if backward else i + 1
        k4 = rhs(ts[inext], y + step * k3)
        y = y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        big = np.max(np.abs(y)) if y.size else 0.0
        if not np.isfinite(big) or big > blowup_cap:
            raise BlowUpError(
                f"{what} left |y| <= {blowup_cap:g} at t = {ts[inext]:.6g}",
                escape_time=float(ts[inext]),
                diagnostics={"max_abs": float(big)},
            )
        k1 = np.asarray(rhs(ts[inext], y), dtype=float)
        emit(inext, y, k1)
    err = None
    if error_estimate:
        fine = rk4(rhs, y0, grid.refined(2), backward=backward, blowup_cap=blowup_cap, what=what)
        err = float(np.max(np.abs(fine.path.values[::2] - values)) / 15.0)
    return RK4Result(GridPath(grid, values, derivs) if store else None, err)
