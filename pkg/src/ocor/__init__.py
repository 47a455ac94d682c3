"""Overlap-aware code retrieval: character-overlap features, an attention and
gating encoder, and the training/evaluation tooling around them."""

__version__ = "0.1.0"
