"""Diffusion-bridge toolkit: I2SB and noise-aligned bridges on toy tasks."""
__version__ = "0.1.0"
