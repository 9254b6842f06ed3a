"""Hierarchical sequence-to-sequence explainable recommendation."""

__version__ = "0.1.0"
