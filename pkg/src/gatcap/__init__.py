"""Geometry-aware attention captioning on synthetic spatial scenes, with a numpy autodiff core."""

__version__ = "0.1.0"
