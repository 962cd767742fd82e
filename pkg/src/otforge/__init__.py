"""Oblivious-transfer protocol laboratory over simulated noisy channels."""

__version__ = "0.1.0"
