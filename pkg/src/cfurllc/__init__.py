"""Finite-blocklength availability analysis of cellular and cell-free Massive MIMO."""

__version__ = "0.1.0"
