"""Landmark-driven 3D morphable model fitting and lip-motion evaluation."""

__version__ = "0.1.0"
