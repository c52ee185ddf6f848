"""Stochastic fluid merge/diverge traffic network: simulation and stability analysis."""

__version__ = "0.1.0"
