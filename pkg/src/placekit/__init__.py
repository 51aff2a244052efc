"""Sticker placement and compositing toolkit."""

__version__ = "0.1.0"
