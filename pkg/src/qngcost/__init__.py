"""Exact metric simulation and shot budgets for natural-gradient VQAs."""

__version__ = "0.1.0"
