"""User identification from VR sensor traces with fixed-block-amount summarization."""

__version__ = "0.1.0"
