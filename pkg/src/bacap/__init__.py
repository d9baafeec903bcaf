"""Boundary-aware hierarchical LSTM video encoder with a GRU caption decoder."""

__version__ = "0.1.0"
