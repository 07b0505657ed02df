"""Synthetic-participant EMG decoding bench."""

__version__ = "0.1.0"
