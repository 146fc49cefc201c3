"""Numerical laboratory for localization of the almost Mathieu operator at completely resonant phases."""

__version__ = "0.1.0"
