"""Saliency-localisation validation for multi-view spatial-attention classifiers."""

__version__ = "0.1.0"
