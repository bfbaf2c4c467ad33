"""Common transport-layer contract for language-model backends.

Both the live HTTP client and the scripted mock implement
:class:`LmmBackend`.  Requests carry the identity of the report/field
they belong to so that the mock can stay deterministic under concurrent
use (its generator is keyed by request identity, never by call order).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

SUPPORTED_IMAGE_FORMATS = ("png", "jpeg", "pdf-page-rasterised")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    n_samples: int
    temperature: float = 1.0
    max_tokens: int = 300
    response_format_hint: str = "json_object"
    # Request identity: required by the mock for deterministic sampling
    # and script lookup; the live client ignores these.
    report_id: str = ""
    field_id: str = ""
    purpose: str = ""  # extract_a | extract_b | validate

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionBatch:
    raw_texts: tuple[str, ...]
    backend_id: str
    latency_ms: float = 0.0


class LmmBackend(abc.ABC):
    """A source of model completions and image transcriptions."""

    backend_id: str = "abstract"

    @abc.abstractmethod
    def complete(self, request: CompletionRequest) -> CompletionBatch:
        """Return exactly ``request.n_samples`` raw completion texts."""

    @abc.abstractmethod
    def transcribe(
        self, image_bytes: bytes, image_format: str, image_id: str | None = None
    ) -> str:
        """Return the text content of a scanned report image.

        ``image_id`` identifies the document for the mock's script; the
        live backend transcribes the bytes and ignores it.
        """
