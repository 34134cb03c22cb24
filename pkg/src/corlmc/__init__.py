"""Copula-based linear model of coregionalization for non-Gaussian spatial data."""

__version__ = "0.1.0"
