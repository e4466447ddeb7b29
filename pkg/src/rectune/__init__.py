"""Agentic tuning of multi-stage recommendation pipeline configurations."""

__version__ = "0.1.0"
