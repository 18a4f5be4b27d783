"""Continuous-time linear networks as a regularized optimal control problem."""

__version__ = "0.1.0"
