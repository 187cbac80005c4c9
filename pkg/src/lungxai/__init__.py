"""Lung CT slice segmentation, classification and attribution evaluation."""

__version__ = "0.1.0"
