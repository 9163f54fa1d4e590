"""Desk-scale regression language models for code-to-metric prediction."""

from rlmkit.numeric import NumericFormat, allowed_tokens, decode, encode

__all__ = ["NumericFormat", "encode", "decode", "allowed_tokens"]

__version__ = "0.1.0"
