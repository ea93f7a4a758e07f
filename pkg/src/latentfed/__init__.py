"""Decentralized multi-modal federated learning simulator.

Heterogeneous clients train private dense models and learnable projection
matrices, collaborating only through per-class low-dimensional latent
statistics aggregated by arithmetic-mean or geometric-median consensus over
a communication graph or a parameter server, with Byzantine adversaries and
byte-exact communication accounting.
"""

__version__ = "0.1.0"
