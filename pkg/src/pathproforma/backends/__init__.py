"""Language-model transport backends: a live OpenAI-compatible HTTP
client and a seeded scripted mock, behind one interface."""

from .base import SUPPORTED_IMAGE_FORMATS, CompletionBatch, CompletionRequest, LmmBackend
from .live import LiveBackend
from .mock import MockBackend, MockScript, ScriptEntry

__all__ = [
    "SUPPORTED_IMAGE_FORMATS",
    "CompletionBatch",
    "CompletionRequest",
    "LmmBackend",
    "LiveBackend",
    "MockBackend",
    "MockScript",
    "ScriptEntry",
]
