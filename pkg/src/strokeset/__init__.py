"""Stroke-set sketch generation: UDF-augmented stroke autoencoder plus latent set diffusion."""
__version__ = "0.1.0"
