"""Transformer machinery shared by the backbone, decoder, projector and DiT."""
