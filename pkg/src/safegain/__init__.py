"""Certified gain-scheduling library and DQN scheduler for quadcopter hover regulation."""

__version__ = "0.1.0"
