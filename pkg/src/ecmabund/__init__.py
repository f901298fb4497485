"""Abundance models for moving populations observed through counts."""

__version__ = "0.1.0"
