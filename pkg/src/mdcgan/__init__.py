"""Mixture density conditional GAN forecasting with baselines and experiment drivers."""

__version__ = "0.1.0"
