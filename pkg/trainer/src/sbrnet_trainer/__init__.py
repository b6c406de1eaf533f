"""Training harness for SBR-Net style descattering reconstruction networks."""

__version__ = "0.1.0"
