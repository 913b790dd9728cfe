"""Transient gas-network simulation and target-value optimization."""

__version__ = "0.1.0"
