"""Uniformly disconnected Cantor sets: exact finite-scale invariants, IFS attractors,
a hyperbolic UQR trap map and Antoine-chain geometry."""

__version__ = "0.1.0"
