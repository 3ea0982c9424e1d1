"""Simulation and decay-rate certification for the two-dimensional Mullins-Sekerka flow
of nearly flat periodic graphs."""

__version__ = "0.1.0"
