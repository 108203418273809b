"""Blind user-activity detection for grant-free access in cell-free massive MIMO."""

__version__ = "0.1.0"
