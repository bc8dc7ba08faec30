"""Neurosymbolic collision warning: simulated sensors, tracking and a small reasoner."""

__version__ = "0.1.0"
