"""Shearlet-based digital wavefront set extraction and its Radon canonical relation."""

__version__ = "0.1.0"
