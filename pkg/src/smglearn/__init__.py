"""Continual segmentation across synthetic sites with gradient-alignment training."""

__version__ = "0.1.0"
