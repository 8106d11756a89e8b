"""Alzheimer's screening from speech by fusing acoustic features with encoder embeddings."""

__version__ = "0.1.0"
