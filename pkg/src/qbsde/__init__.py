"""Quadratic semimartingales and quadratic BSDEs on finite lattices."""

__version__ = "0.1.0"
