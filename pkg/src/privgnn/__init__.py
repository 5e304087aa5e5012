"""Differentially private graph neural networks via noisy multi-hop
aggregation, with Renyi-DP accounting and an empirical membership audit."""

__version__ = "0.1.0"
