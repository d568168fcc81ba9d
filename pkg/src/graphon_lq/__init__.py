"""Linear-quadratic graphon games: spectral equilibrium solver, finite-game
Nash solver and Monte Carlo diagnostics."""

__version__ = "0.1.0"
