"""Approximate violation of safety properties for neural navigation policies."""

__version__ = "0.1.0"
