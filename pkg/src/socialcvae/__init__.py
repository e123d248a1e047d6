"""Probabilistic multi-agent trajectory forecasting: interaction graph + conditional VAE."""

__version__ = "0.1.0"
