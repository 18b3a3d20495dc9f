"""Positivity certificates for robust and nonlinear stability analysis."""

__version__ = "0.1.0"
