"""Reflection-aware direct voxel grid optimization."""

__version__ = "0.1.0"
