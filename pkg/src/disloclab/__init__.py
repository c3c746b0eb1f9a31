"""Numerical laboratory for frame-field models of edge dislocations."""
__version__ = "0.1.0"
