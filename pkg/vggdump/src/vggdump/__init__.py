"""Batch exporter of pretrained VGG19 activations for the texture-transfer
engine's ".tnsr" exchange format."""

__version__ = "0.1.0"
