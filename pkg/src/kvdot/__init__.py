"""Simultaneous recovery of diffusion and reaction coefficients from boundary Cauchy data."""

__version__ = "0.1.0"
