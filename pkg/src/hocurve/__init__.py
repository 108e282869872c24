"""Curving straight-sided tetrahedral meshes into high-order meshes."""
__version__ = "0.1.0"
