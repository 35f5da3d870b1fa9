"""Specific Wasserstein divergences between martingale laws and optimal win-martingales."""

__version__ = "0.1.0"
