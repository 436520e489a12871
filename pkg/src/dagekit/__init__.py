"""Supervised domain adaptation as graph embedding."""
__version__ = "0.1.0"
