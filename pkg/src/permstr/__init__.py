"""Permuted autoregressive sequence models for text-image recognition, at desk scale."""

__version__ = "0.1.0"
