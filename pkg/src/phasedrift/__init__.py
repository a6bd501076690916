"""Decoherence of high-frequency waves in two mismatched random media."""

__version__ = "0.1.0"
