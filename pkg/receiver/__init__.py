"""Soft MIMO detection, turbo decoding and the iterative receiver loop."""
