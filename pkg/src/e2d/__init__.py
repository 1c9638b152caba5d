"""Desk-scale dataset distillation with explore/exploit crop scheduling."""

__version__ = "0.1.0"
