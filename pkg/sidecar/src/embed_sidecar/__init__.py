"""Embedding sidecar: serves text and image vectors over a fixed HTTP protocol."""

__version__ = "0.1.0"
