"""Run configuration: JSON with five blocks, validated strictly."""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .graphon import GraphonKernel, kernel_from_dict
from .model import GameCoefficients


@dataclass
class GraphonConfig:
    family: str = "constant"
    K: float = 1.0
    gamma: float = -0.4
    csv: str | None = None
    values: list | None = None
    K_modes: int = 1
    grid_size: int = 200

    def kernel(self, base_dir: Path | None = None) -> GraphonKernel:
        spec = {"family": self.family, "K": self.K, "gamma": self.gamma}
        if self.csv is not None:
            p = Path(self.csv)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            spec["csv"] = str(p)
        if self.values is not None:
            spec["values"] = self.values
        return kernel_from_dict(spec)


@dataclass
class CoefficientsConfig:
    a: float
    b: float
    c: float
    C_f: list
    C_h: list
    T: float
    m0: float = 0.0
    v0: float = 0.0

    def build(self) -> GameCoefficients:
        return GameCoefficients(self.a, self.b, self.c, self.C_f, self.C_h, self.T, self.m0, self.v0)


@dataclass
class SolverConfig:
    dt: float | None = None        # default: T / 2000
    M_x: int = 200
    gamma_z2_literal: bool = False
    riccati_literal: bool = False
    blowup_cap: float = 1e8
    max_truncation_residual: float | None = None
    oracle_tol: float = 1e-8
    oracle_max_iter: int = 200
    oracle_bound: float = 1e-4
    finite_dt: float | None = None  # default: T / 600
    max_N: int = 128


@dataclass
class SimulationConfig:
    n_paths: int = 10_000
    dt_sim: float | None = None    # default: the finite-game step
    seed: int = 0
    N: int = 8
    N_list: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    eps_max_N: int = 64
    elln_x: float = 0.5
    n_indices: int | None = None
    hist_bins: int = 60
    hist_times: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])


@dataclass
class OutputConfig:
    directory: str = "runs/out"
    thin: int = 10                 # keep every thin-th time step in trajectory CSVs
    csv: list = field(default_factory=lambda: ["surfaces", "modes", "riccati", "histogram",
                                                "simulation", "convergence", "nplayer", "oracle"])


@dataclass
class RunConfig:
    graphon: GraphonConfig
    coefficients: CoefficientsConfig
    solver: SolverConfig
    simulation: SimulationConfig
    output: OutputConfig
    base_dir: Path | None = None

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in BLOCKS}

    @property
    def T(self) -> float:
        return float(self.coefficients.T)

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.solver.dt, 2000, "solver.dt")

    @property
    def finite_n_steps(self) -> int:
        return steps_for(self.T, self.solver.finite_dt, 600, "solver.finite_dt")

    def sim_n_steps(self, default: int) -> int:
        return steps_for(self.T, self.simulation.dt_sim, default, "simulation.dt_sim")


def steps_for(T: float, dt, default: int, name: str) -> int:
    if dt is None:
        return default
    if not dt > 0:
        raise ConfigError(f"{name} must be positive")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"{name} = {dt} does not divide T = {T}")
    return int(n)


BLOCKS = {"graphon": GraphonConfig, "coefficients": CoefficientsConfig, "solver": SolverConfig,
          "simulation": SimulationConfig, "output": OutputConfig}
REQUIRED = {"graphon", "coefficients"}


def _build_block(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"block '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        missing = [f.name for f in fields(cls) if f.name not in data
                   and f.default is MISSING and f.default_factory is MISSING]
        raise ConfigError(f"block '{name}': missing required field(s) {', '.join(missing)}") from None


def from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(BLOCKS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    missing = sorted(REQUIRED - set(data))
    if missing:
        raise ConfigError(f"missing block(s): {', '.join(missing)}")
    blocks = {name: _build_block(name, cls, data.get(name, {})) for name, cls in BLOCKS.items()}
    cfg = RunConfig(**blocks, base_dir=base_dir)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data, path.parent)


def validate(cfg: RunConfig):
    co = cfg.coefficients
    for name in ("a", "b", "c", "T", "m0", "v0"):
        if not isinstance(getattr(co, name), (int, float)) or isinstance(getattr(co, name), bool):
            raise ConfigError(f"coefficients.{name} must be a number")
    if co.T <= 0:
        raise ConfigError("coefficients.T must be positive")
    if co.v0 < 0:
        raise ConfigError("coefficients.v0 must be non-negative")
    try:
        co.build()
    except ValueError as exc:
        raise ConfigError(f"coefficients: {exc}") from None
    g = cfg.graphon
    if g.family not in ("constant", "power_law", "min_max", "grid"):
        raise ConfigError(f"graphon.family: unknown family {g.family!r}")
    if g.family == "grid" and g.csv is None and g.values is None:
        raise ConfigError("graphon: grid family needs 'csv' or 'values'")
    try:
        g.kernel(cfg.base_dir)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"graphon: {exc}") from None
    if g.K_modes < 1 or g.grid_size < g.K_modes:
        raise ConfigError("graphon: need 1 <= K_modes <= grid_size")
    if cfg.output.thin < 1:
        raise ConfigError("output.thin must be positive")
    if cfg.solver.M_x < 1:
        raise ConfigError("solver.M_x must be positive")
    cfg.n_steps, cfg.finite_n_steps, cfg.sim_n_steps(1)
    sim = cfg.simulation
    if sim.n_paths < 2:
        raise ConfigError("simulation.n_paths must be at least 2")
    if sorted(set(sim.N_list)) != list(sim.N_list) or min(sim.N_list, default=1) < 1:
        raise ConfigError("simulation.N_list must be strictly increasing positive integers")
