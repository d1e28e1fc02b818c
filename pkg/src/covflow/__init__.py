"""Covariance dynamics of Gaussian moments under optimal affine coupling blocks."""

__version__ = "0.1.0"
