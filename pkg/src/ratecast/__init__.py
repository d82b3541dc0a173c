"""Ordinal rating of network path performance and its inference by matrix completion."""

__version__ = "0.1.0"
