"""Flood adaptation planning: simulation environment, policy, and training."""

__version__ = "0.1.0"
