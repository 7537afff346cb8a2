"""Decomposed-critic reinforcement learning lab: trajectory representations,
return models, conditional VAE dynamics and the agents built on them."""

from .version import __version__

__all__ = ["__version__"]
