"""Spreading speeds for the field-road system in conical domains."""

__version__ = "0.1.0"
