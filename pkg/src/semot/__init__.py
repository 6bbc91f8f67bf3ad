"""Specific-entropic martingale optimal transport: PDE solver and Poissonization Monte Carlo."""

__version__ = "0.1.0"
