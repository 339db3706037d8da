"""Simulation and statistical tests of path-spin contextuality in a
post-selected EPR-Bohm interferometer."""

__version__ = "0.1.0"
