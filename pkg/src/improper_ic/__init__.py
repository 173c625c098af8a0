"""Improper-signalling precoder design for SISO interference channels."""

__version__ = "0.1.0"
