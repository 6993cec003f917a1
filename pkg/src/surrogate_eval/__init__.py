"""Surrogate marker evaluation: rank-based and Bayesian imputation tests."""

__version__ = "0.1.0"
