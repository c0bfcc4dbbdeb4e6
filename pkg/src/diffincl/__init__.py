"""Numerical tools for second-order differential inclusions with
velocity-discontinuous right-hand sides (dry-friction type)."""

__version__ = "0.1.0"
