"""Numerical companion for ``Delta u + h u = u^5`` on star-shaped domains of R^3.

Laplacians carry the analyst sign, ``Delta = -sum_i d_i^2``.
"""
from .fields import CoefficientH, ScalarField3D, ScalarFieldRadial
from .geometry import Domain, Grid3D, RadialGrid

__version__ = "0.1.0"

__all__ = ["CoefficientH", "Domain", "Grid3D", "RadialGrid", "ScalarField3D", "ScalarFieldRadial"]
