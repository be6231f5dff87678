"""Explicit low-energy symplectomorphisms of R^4 and numerical section-area checks."""

__version__ = "0.1.0"
