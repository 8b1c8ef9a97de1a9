"""Sobolev-preconditioned parameterized shape optimization toolkit."""

__version__ = "0.3.0"
