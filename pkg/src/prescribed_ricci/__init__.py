"""Prescribed Ricci curvature near Einstein metrics with boundary, on finite-difference grids."""

__version__ = "0.1.0"
