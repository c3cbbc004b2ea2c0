"""Robustness analysis with dissipation LMIs and integral quadratic constraints."""

__version__ = "0.1.0"
