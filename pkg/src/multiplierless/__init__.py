"""Multiplierless approximation of trained convolutional networks."""

__version__ = "0.1.0"
