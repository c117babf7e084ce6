"""Confidence-gated actor-critic laboratory on a deterministic highway simulator."""

__version__ = "0.1.0"
