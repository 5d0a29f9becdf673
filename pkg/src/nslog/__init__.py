"""Numerical laboratory for nested-logarithm regularity criteria of fractional Navier-Stokes."""
from __future__ import annotations
__version__ = "0.1.0"
