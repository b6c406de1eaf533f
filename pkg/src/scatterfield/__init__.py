"""Synthetic light-field fluorescence scattering simulator and evaluation toolkit."""

__version__ = "0.1.0"
