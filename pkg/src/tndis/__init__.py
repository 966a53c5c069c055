"""Tensor-network compression and disentangling of neural-network layers."""

__version__ = "0.1.0"
