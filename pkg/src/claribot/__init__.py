"""Workbench for learning conversational error-recovery dialog policies."""

__version__ = "0.1.0"
