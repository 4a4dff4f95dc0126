"""Tools for probing single- versus multi-vector retrieval on LIMIT-style data."""

__version__ = "0.1.0"
