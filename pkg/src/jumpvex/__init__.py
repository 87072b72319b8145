"""Convexity and monotonicity of option prices under jump-diffusion models."""

__version__ = "0.1.0"
