"""Quantum symmetric simple exclusion: matrix Monte Carlo, moment hierarchy and steady-state oracles."""

__version__ = "0.1.0"
