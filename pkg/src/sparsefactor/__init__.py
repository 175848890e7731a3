"""Sparse Bayesian factor models for covariance estimation."""

__version__ = "0.1.0"
