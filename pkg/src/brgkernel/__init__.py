"""Analytic Bergman symbols and kernels for real-analytic weights."""

__version__ = "0.1.0"
