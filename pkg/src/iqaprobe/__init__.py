"""Perceptual robustness workbench for no-reference image quality models."""

__version__ = "0.1.0"
