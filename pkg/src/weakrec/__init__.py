"""Weak-user detection and LLM re-ranking on top of classical top-k recommenders."""

__version__ = "0.1.0"
