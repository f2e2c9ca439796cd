"""Parameterization-independent shape features from varifold gradients."""

__version__ = "0.1.0"
