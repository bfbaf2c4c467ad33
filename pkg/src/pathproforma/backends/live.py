"""Live client for an OpenAI-compatible chat-completions endpoint.

Transient failures (HTTP 429/5xx and network errors) are retried with
jittered exponential backoff up to a fixed attempt budget; other client
errors fail immediately.  The credential is read from the
``LMM_API_KEY`` environment variable.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import random
import time
from typing import Callable

import httpx

from ..errors import AuthError, TransportError, TranscriptionEmptyError, UnsupportedFormatError
from .base import SUPPORTED_IMAGE_FORMATS, CompletionBatch, CompletionRequest, LmmBackend

log = logging.getLogger(__name__)

API_KEY_ENV = "LMM_API_KEY"

DEFAULT_TRANSCRIPTION_PROMPT = (
    "Transcribe every piece of text in this scanned pathology report, in reading "
    "order, preserving headings and numbers exactly. Output the plain text only."
)

_MEDIA_TYPES = {
    "png": "image/png",
    "jpeg": "image/jpeg",
    "pdf-page-rasterised": "image/png",
}


class LiveBackend(LmmBackend):
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retry_attempts: int = 4,
        retry_base_delay_s: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no credential: set {API_KEY_ENV}")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retry_attempts = retry_attempts
        self.retry_base_delay_s = retry_base_delay_s
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout_s)
        self._headers = {"Authorization": f"Bearer {key}"}
        self.backend_id = f"live:{model}"

    # -- HTTP ----------------------------------------------------------

    def _post_chat(self, payload: dict) -> dict:
        url = f"{self.base_url}/v1/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.retry_attempts):
            if attempt:
                delay = self.retry_base_delay_s * (2 ** (attempt - 1))
                self._sleep(delay + random.uniform(0, delay / 4))
            try:
                response = self._client.post(url, json=payload, headers=self._headers)
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code in (401, 403):
                raise AuthError(f"credential rejected (HTTP {response.status_code})")
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                log.warning("retryable HTTP %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code >= 400:
                # Non-retryable client error: fail fast.
                raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                return response.json()
            except (json.JSONDecodeError, ValueError) as exc:
                last_error = exc
                log.warning("unparseable response body (attempt %d)", attempt + 1)
                continue
        raise TransportError(f"retry budget exhausted: {last_error}")

    @staticmethod
    def _choice_texts(body: dict) -> list[str]:
        texts = []
        for choice in body.get("choices", []):
            content = (choice.get("message") or {}).get("content")
            if isinstance(content, str):
                texts.append(content)
        return texts

    # -- LmmBackend ------------------------------------------------------

    def complete(self, request: CompletionRequest) -> CompletionBatch:
        started = time.monotonic()
        texts: list[str] = []
        rounds = 0
        while len(texts) < request.n_samples:
            if rounds >= self.retry_attempts:
                raise TransportError(
                    f"backend returned {len(texts)}/{request.n_samples} samples"
                )
            rounds += 1
            payload = {
                "model": self.model,
                "messages": [{"role": "user", "content": request.prompt}],
                "n": request.n_samples - len(texts),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            }
            if request.response_format_hint:
                payload["response_format"] = {"type": request.response_format_hint}
            body = self._post_chat(payload)
            got = self._choice_texts(body)
            if not got:
                raise TransportError("response carried no completion choices")
            texts.extend(got)
        elapsed_ms = (time.monotonic() - started) * 1000.0
        return CompletionBatch(
            raw_texts=tuple(texts[: request.n_samples]),
            backend_id=self.backend_id,
            latency_ms=elapsed_ms,
        )

    def transcribe(
        self, image_bytes: bytes, image_format: str, image_id: str | None = None
    ) -> str:
        if image_format not in SUPPORTED_IMAGE_FORMATS:
            raise UnsupportedFormatError(image_format)
        media = _MEDIA_TYPES[image_format]
        data_url = f"data:{media};base64,{base64.b64encode(image_bytes).decode('ascii')}"
        payload = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": DEFAULT_TRANSCRIPTION_PROMPT},
                        {"type": "image_url", "image_url": {"url": data_url}},
                    ],
                }
            ],
            "max_tokens": 4000,
        }
        body = self._post_chat(payload)
        texts = self._choice_texts(body)
        text = texts[0] if texts else ""
        if not text.strip():
            raise TranscriptionEmptyError(image_id or "<unnamed image>")
        return text
