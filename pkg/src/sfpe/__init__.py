"""Simulation and verification toolkit for tail asymptotics of stochastic
fixed-point equations R = Psi(R) in distribution."""

__version__ = "0.1.0"
