"""Differentiable volumetric rendering and multi-view scene fitting."""

__version__ = "1.0.0"
