"""Numerical laboratory for kinetic Langevin hypercontractivity."""

__version__ = "0.1.0"
