"""Mixture of Bidders: continual learning with auction-routed experts."""

__version__ = "0.1.0"
