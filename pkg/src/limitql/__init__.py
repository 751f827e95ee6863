"""Adaptive upper-bound limit analysis on conforming quadtree meshes."""

__version__ = "0.1.0"
