"""Fluctuation suppression and enhancement in mean-field particle systems."""

__version__ = "0.1.0"
