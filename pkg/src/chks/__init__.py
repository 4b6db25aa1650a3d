"""Cahn-Hilliard-chemotaxis simulator with logistic degradation and its diagnostics."""

__version__ = "0.1.0"
