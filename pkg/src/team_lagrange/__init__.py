"""Lagrange multipliers for stochastic team decision problems on finite scenario spaces."""

__version__ = "0.1.0"
