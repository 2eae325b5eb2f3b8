"""Deterministic simulator and protocol library for synchronous beeping networks."""

__version__ = "0.1.0"
