"""Progressive-growing GAN toolkit for overhead river imagery."""

__version__ = "0.1.0"
