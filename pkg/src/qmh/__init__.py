"""Filtered quantum-walk sampling of Gibbs distributions on small lattices."""

__version__ = "0.1.0"
