"""Desk-scale decoding engine for prompt-embedding style interpolation and KV-cache style transitions."""

__version__ = "0.1.0"
