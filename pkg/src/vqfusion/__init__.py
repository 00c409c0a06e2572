"""Dual-stream no-reference video quality engine with text-guided fusion."""

__version__ = "0.1.0"
