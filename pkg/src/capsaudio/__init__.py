"""Capsule-network audio classifier with dynamic routing-by-agreement."""

__version__ = "0.1.0"
