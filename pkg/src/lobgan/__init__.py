"""Limit order book simulator driven by a conditional WGAN-GP world agent."""

__version__ = "0.1.0"
