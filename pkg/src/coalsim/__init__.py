"""Spatial coalescents on Z^2 and their Kingman-type limits."""

__version__ = "0.1.0"
