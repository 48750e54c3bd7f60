"""Symbolic and numeric projection of Poisson brackets between levels of
description in non-equilibrium thermodynamics."""

__version__ = "0.1.0"
