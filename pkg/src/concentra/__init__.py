"""Numerical verification toolkit for concentrating solutions of weighted
almost-critical elliptic problems."""

__version__ = "0.1.0"
