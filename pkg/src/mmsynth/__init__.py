"""Metamath corpus loading, forward theorem synthesis and backward proof search."""

__version__ = "0.1.0"
