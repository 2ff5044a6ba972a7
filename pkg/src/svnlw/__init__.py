"""Pseudospectral laboratory for the Wick-renormalized stochastic viscous wave equation on the 2-torus."""

__version__ = "0.1.0"
