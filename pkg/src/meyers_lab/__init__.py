"""Finite-element laboratory for elliptic equations with a skew-symmetric coefficient part."""

__version__ = "0.1.0"
