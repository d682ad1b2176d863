"""Multimodal deep face representation: geometry, small CNN ensemble, SAE fusion, matching."""

__version__ = "0.1.0"

MODALITIES = ("H1", "H2", "P1", "P2", "P3", "P4", "P5", "P6")
