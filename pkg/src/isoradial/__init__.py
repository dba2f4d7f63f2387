"""Discrete geometry on isoradial Delaunay graphs: operators, Green's function,
log-determinants, deformations and their variations."""

__version__ = "0.1.0"
