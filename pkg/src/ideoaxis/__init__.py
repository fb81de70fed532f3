"""Embedding-based ideal points for legislators from parliamentary speech."""

__version__ = "0.1.0"
