"""Conditional neural fields as decoders for 2D semantic segmentation."""

__version__ = "0.1.0"
