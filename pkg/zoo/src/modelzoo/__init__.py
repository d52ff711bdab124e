"""Toy-network training and NWB1 export for the reasoner engine."""

__version__ = "0.1.0"
