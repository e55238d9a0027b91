"""Measurement pipeline for conspiracy content in short-video corpora."""

__version__ = "0.1.0"
