"""Minimum (relative) entropy densities consistent with a set of option prices."""

__version__ = "0.1.0"
