"""Static figures from distillation run directories."""

from .figures import FigureData, Series, build, render

__all__ = ["FigureData", "Series", "build", "render"]
