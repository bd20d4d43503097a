"""Yao-graph geometric spanners on a simulated MPC model."""

__version__ = "0.1.0"
