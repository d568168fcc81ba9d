"""Graphon kernels, their spectral decompositions and sampled weight matrices.

All inner products on the index space I = [0, 1] use the midpoint rule on the
uniform grid ``x_j = (j + 1/2) / M``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError, UnsupportedParameterError


def midpoint_grid(M: int) -> np.ndarray:
    return (np.arange(M) + 0.5) / M


def _check_domain(*arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise DomainError("graphon indices must lie in [0, 1]")


class GraphonKernel:
    """Base class for symmetric kernels ``w: [0,1]^2 -> [0,1]``."""

    name = "kernel"

    def __call__(self, x, y):
        _check_domain(x, y)
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self._eval(x, y)

    def _eval(self, x, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(GraphonKernel):
    K: float = 1.0
    name = "constant"

    def __post_init__(self):
        if not 0.0 <= self.K <= 1.0:
            raise UnsupportedParameterError(f"constant graphon level must be in [0, 1], got {self.K}")

    def _eval(self, x, y):
        return np.full(x.shape, float(self.K))

    def to_dict(self):
        return {"family": "constant", "K": self.K}


@dataclass(frozen=True)
class PowerLaw(GraphonKernel):
    """``w(x, y) = (x y)^(-gamma)``, bounded by one for ``gamma <= 0``."""

    gamma: float = -0.4
    name = "power_law"

    def __post_init__(self):
        if self.gamma > 0:
            raise UnsupportedParameterError(
                f"power-law graphon is unbounded for gamma > 0 (got {self.gamma})"
            )

    def _eval(self, x, y):
        return (x * y) ** (-self.gamma)

    def to_dict(self):
        return {"family": "power_law", "gamma": self.gamma}


@dataclass(frozen=True)
class MinMax(GraphonKernel):
    """``w(x, y) = min(x, y) (1 - max(x, y))``."""

    name = "min_max"

    def _eval(self, x, y):
        return np.minimum(x, y) * (1.0 - np.maximum(x, y))

    def to_dict(self):
        return {"family": "min_max"}


@dataclass(frozen=True, eq=False)
class GridKernel(GraphonKernel):
    """Piecewise-constant kernel: ``values[i, j]`` on cell ``[i/M, (i+1)/M) x [j/M, (j+1)/M)``."""

    values: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))
    source: str | None = None
    name = "grid"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] == 0:
            raise ValueError(f"grid kernel must be a non-empty square matrix, got shape {v.shape}")
        if not np.allclose(v, v.T, rtol=0, atol=1e-12):
            raise ValueError("grid kernel must be symmetric")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("grid kernel entries must lie in [0, 1]")
        v = 0.5 * (v + v.T)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def cell(self, x):
        return np.minimum((np.asarray(x) * self.M).astype(int), self.M - 1)

    def _eval(self, x, y):
        return self.values[self.cell(x), self.cell(y)]

    def to_dict(self):
        d = {"family": "grid"}
        if self.source:
            d["csv"] = self.source
        else:
            d["values"] = self.values.tolist()
        return d

    @classmethod
    def from_kernel(cls, kernel: GraphonKernel, M: int) -> "GridKernel":
        """Sample ``kernel`` at cell midpoints."""
        x = midpoint_grid(M)
        return cls(kernel(x[:, None], x[None, :]))

    @classmethod
    def from_csv(cls, path) -> "GridKernel":
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        return cls(np.array(rows), source=str(path))


def evaluate(kernel: GraphonKernel, x, y):
    """Kernel value ``w(x, y)``; raises :class:`DomainError` outside ``[0, 1]``."""
    return kernel(x, y)


def kernel_from_dict(spec: dict) -> GraphonKernel:
    family = spec.get("family")
    if family == "constant":
        return Constant(float(spec.get("K", 1.0)))
    if family == "power_law":
        return PowerLaw(float(spec["gamma"]))
    if family == "min_max":
        return MinMax()
    if family == "grid":
        if "csv" in spec:
            return GridKernel.from_csv(spec["csv"])
        return GridKernel(np.array(spec["values"], dtype=float))
    raise ValueError(f"unknown graphon family {family!r}")


@dataclass(frozen=True, eq=False)
class SpectralGraphon:
    """A kernel together with its leading eigenpairs.

    ``phi_grid[k, j]`` holds the ``k``-th eigenfunction at ``grid[j]``;
    eigenfunctions are normalised in ``L^2(0, 1)``.
    """

    kernel: GraphonKernel
    eigenvalues: np.ndarray
    grid: np.ndarray
    phi_grid: np.ndarray
    truncation_residual: float
    norm_sq: float
    analytic: bool

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def M(self) -> int:
        return len(self.grid)

    def eigenfunctions(self, x) -> np.ndarray:
        """Eigenfunction values at arbitrary indices, shape ``(n_modes, len(x))``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        _check_domain(x)
        k = self.kernel
        if isinstance(k, Constant):
            return np.ones((1, len(x)))
        if isinstance(k, PowerLaw):
            lam = self.eigenvalues[0]
            return (x ** (-k.gamma) / np.sqrt(lam))[None, :]
        if isinstance(k, MinMax):
            ks = np.arange(1, self.n_modes + 1)[:, None]
            return np.sqrt(2.0) * np.sin(np.pi * ks * x[None, :])
        # Nystrom extension: phi(x) = (1 / lambda) int w(x, y) phi(y) dy
        w = k(x[:, None], self.grid[None, :])
        return (self.phi_grid @ w.T) / (self.M * self.eigenvalues[:, None])

    def inner(self, f) -> np.ndarray:
        """Grid inner products ``<f, phi_k>`` for a function sampled on ``grid``."""
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.M:
            raise ValueError(f"function has {f.shape[-1]} samples, grid has {self.M}")
        return f @ self.phi_grid.T / self.M


def _l2_norm_sq(kernel: GraphonKernel, M: int) -> float:
    if isinstance(kernel, Constant):
        return kernel.K ** 2
    if isinstance(kernel, PowerLaw):
        return (1.0 / (1.0 - 2.0 * kernel.gamma)) ** 2
    if isinstance(kernel, MinMax):
        return 1.0 / 90.0
    if isinstance(kernel, GridKernel):
        return float(np.mean(kernel.values ** 2))
    x = midpoint_grid(M)
    return float(np.mean(kernel(x[:, None], x[None, :]) ** 2))


def decompose(kernel: GraphonKernel, n_modes: int, grid_size: int = 200) -> SpectralGraphon:
    """Leading ``n_modes`` eigenpairs of the integral operator of ``kernel``.

    Constant, power-law and min-max kernels use their closed-form eigenpairs
    (the first two have rank one, so at most one mode is returned).  Grid
    kernels are discretised with the midpoint rule on ``grid_size`` points and
    the resulting symmetric matrix is diagonalised.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    if grid_size < n_modes:
        raise ValueError("grid_size must be at least n_modes")
    x = midpoint_grid(grid_size)
    norm_sq = _l2_norm_sq(kernel, grid_size)
    if isinstance(kernel, Constant):
        lam = np.array([kernel.K])
        phi = np.ones((1, grid_size))
        analytic = True
    elif isinstance(kernel, PowerLaw):
        lam = np.array([1.0 / (1.0 - 2.0 * kernel.gamma)])
        phi = (x ** (-kernel.gamma) / np.sqrt(lam[0]))[None, :]
        analytic = True
    elif isinstance(kernel, MinMax):
        ks = np.arange(1, n_modes + 1)
        lam = 1.0 / (np.pi * ks) ** 2
        phi = np.sqrt(2.0) * np.sin(np.pi * ks[:, None] * x[None, :])
        analytic = True
    else:
        mat = kernel(x[:, None], x[None, :]) / grid_size
        try:
            vals, vecs = np.linalg.eigh(mat)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"symmetric eigensolver failed: {exc}",
                {"grid_size": grid_size, "matrix_norm": float(np.linalg.norm(mat))},
            ) from exc
        order = np.argsort(-np.abs(vals), kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        keep = np.abs(vals) > 1e-12 * max(1.0, np.abs(vals[0]))
        vals, vecs = vals[keep][:n_modes], vecs[:, keep][:, :n_modes]
        phi = np.sqrt(grid_size) * vecs.T
        # deterministic sign: first entry of largest magnitude is positive
        lead = phi[np.arange(len(vals)), np.argmax(np.abs(phi), axis=1)]
        phi = phi * np.sign(lead)[:, None]
        lam = vals
        analytic = False
    residual = max(0.0, norm_sq - float(np.sum(lam ** 2)))
    return SpectralGraphon(kernel, lam, x, phi, residual, norm_sq, analytic)


def apply_operator(sg: SpectralGraphon, f) -> np.ndarray:
    """Truncated operator ``[W f](x) = sum_k lambda_k phi_k(x) <f, phi_k>`` on the grid."""
    coeffs = sg.inner(f)
    return (coeffs * sg.eigenvalues) @ sg.phi_grid


def sample_weights(kernel: GraphonKernel, indices) -> np.ndarray:
    """Interaction matrix ``W_N[k, l] = w(x_k, x_l)``, diagonal included."""
    x = np.asarray(indices, dtype=float)
    _check_domain(x)
    return kernel(x[:, None], x[None, :])
