"""Unsupervised text-to-speech on a conditional disentangled sequential VAE."""

__version__ = "0.1.0"
