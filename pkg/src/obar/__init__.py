"""Object-based audio rendering with context-driven scene adaptation."""

__version__ = "0.1.0"
