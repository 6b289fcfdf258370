"""Frozen-backbone dialogue engine with plug-in skill adapters."""

__version__ = "0.1.0"
