"""Factorised-discriminator GANs."""
