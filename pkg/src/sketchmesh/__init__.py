"""Mesh generation from single free-hand sketches with explicit viewpoint control."""

__version__ = "0.1.0"
