"""Pseudo-spectral mollified MHD solver with an energy and scaling verification harness."""

__version__ = "0.1.0"
