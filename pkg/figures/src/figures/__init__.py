"""Plotting companion for chaosfem run directories."""

__version__ = "0.1.0"
