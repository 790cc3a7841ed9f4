"""Frozen-foundation-model guesses as a second input channel for a small 3D U-Net."""

__version__ = "0.1.0"
