"""Desk-scale class-knowledge-propagation network for few-shot episodes."""

__version__ = "0.1.0"
