"""Structured colorectal pathology report extraction with calibrated,
per-field confidence scores and abstention support."""

__version__ = "0.1.0"
