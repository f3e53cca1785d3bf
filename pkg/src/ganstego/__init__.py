"""Coverless steganography driven by an ACGAN generator."""
