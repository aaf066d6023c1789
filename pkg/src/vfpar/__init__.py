"""Functionally pooled AR identification over multiple flight states."""

__version__ = "0.1.0"
