"""Shallow neural representations of arbitrage-free implied volatility surfaces."""

__version__ = "0.1.0"
