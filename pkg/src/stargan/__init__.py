"""Multi-domain image-to-image translation with one conditional generator/discriminator pair."""

__version__ = "0.1.0"
