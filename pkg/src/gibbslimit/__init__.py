"""Numerical laboratory for conditional limit laws of Gibbs ensembles."""

__version__ = "0.1.0"
