"""Desk-scale multimodal stack: tiled high-resolution image encoding fused
into a byte-level causal decoder through tanh-gated cross-attention."""

__version__ = "0.1.0"
