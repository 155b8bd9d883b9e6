"""Optimal drift and impulse band control of a Brownian inventory."""

__version__ = "0.1.0"
