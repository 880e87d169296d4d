"""Micropolar fluid-structure interaction on moving triangular meshes."""

__version__ = "0.1.0"
