"""Unified storage, mapping and prediction services for soil sensing data."""

__version__ = "0.1.0"
