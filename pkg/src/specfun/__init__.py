"""Spectral functions of nonsymmetric 2x2 first-order operators on the half line."""

__version__ = "0.1.0"
