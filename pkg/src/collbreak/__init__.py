"""Sectional solver and verification harness for collision-induced breakage."""

__version__ = "0.1.0"
