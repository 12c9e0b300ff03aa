"""Directed-information adversarial imitation with a categorical-latent VAE prior."""

__version__ = "0.1.0"
