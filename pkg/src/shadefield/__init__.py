"""Shading-field image harmonization: shadow-aware shading bases, direction-aware
illumination descriptors, and the synthetic tuple pipeline that feeds them."""

__version__ = "0.1.0"
