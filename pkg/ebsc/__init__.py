"""Empirical-Bayes smoothing splines with nonparametric stationary errors."""

__version__ = "0.1.0"
TOOL_NAME = "ebsc"
