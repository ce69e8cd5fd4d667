"""Desk-scale almost-unsupervised TTS/ASR training toolkit."""

from .backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
