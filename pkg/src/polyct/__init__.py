"""Polychromatic neural-field CT reconstruction for metal artifact reduction."""

__version__ = "0.1.0"
