"""Consistency-aware graph neural recommender over rating and trust edges."""

__version__ = "0.1.0"
