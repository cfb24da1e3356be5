"""Predictive-parity calibration toolkit."""

__version__ = "0.1.0"
