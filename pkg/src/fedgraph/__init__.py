"""Simulated graph federated recommendation with distance-weighted user aggregation."""

__version__ = "0.1.0"
