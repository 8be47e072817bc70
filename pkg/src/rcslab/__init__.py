"""Desk-scale random circuit sampling: simulation, XEB benchmarking and verification."""

__version__ = "0.1.0"
