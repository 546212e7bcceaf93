"""Autoencoder-learned observables for extended dynamic mode decomposition."""

__version__ = "0.1.0"
