"""Multisensor data fusion for human-robot collaboration cells."""

__version__ = "0.1.0"
