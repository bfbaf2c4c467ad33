"""Scripted mock backend with a configurable noise model.

The script assigns each (report, field) pair a truth value, a per-sample
accuracy, weighted distractors, and a malformed-output probability, plus
validator-side behaviour (how often a validation sample judges the
extracted value correctly, and the self-confidence ranges it reports
when endorsing or rejecting).  Every sample is drawn from a generator
keyed by (seed, report, field, purpose, sample index), so output is
bit-for-bit reproducible regardless of call order or concurrency.

Validation requests do not carry the extracted value explicitly; the
mock recovers it from the "Value under review" line that the prompt
builder always embeds (see :mod:`pathproforma.prompts`).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..errors import (
    ScriptError,
    ScriptMissError,
    TranscriptionEmptyError,
    UnsupportedFormatError,
)
from ..prompts import EXTRACTED_VALUE_RE
from ..schema import Catalogue, NormalisationFailure, default_catalogue
from .base import SUPPORTED_IMAGE_FORMATS, CompletionBatch, CompletionRequest, LmmBackend

_MALFORMED_POOL = (
    "I cannot determine this from the report.",
    "Sorry, I am unable to comply with that request.",
    "The value might be recorded elsewhere in the notes...",
    "<response truncated>",
)


@dataclass(frozen=True)
class ScriptEntry:
    truth: str
    accuracy: float
    distractors: Mapping[str, float] = field(default_factory=dict)
    malformed_prob: float = 0.0
    validator_accuracy: float | None = None  # defaults to accuracy
    validator_malformed_prob: float | None = None  # defaults to malformed_prob
    endorse_confidence: tuple[int, int] = (80, 99)
    reject_confidence: tuple[int, int] = (40, 80)

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise ScriptError("accuracy must lie in [0, 1]")
        if not 0.0 <= self.malformed_prob <= 1.0:
            raise ScriptError("malformed_prob must lie in [0, 1]")
        if self.accuracy + self.malformed_prob > 1.0 + 1e-9:
            raise ScriptError("accuracy + malformed_prob must not exceed 1")
        residual = 1.0 - self.accuracy - self.malformed_prob
        if residual > 1e-9 and not self.distractors:
            raise ScriptError(
                "entries with accuracy + malformed_prob < 1 need distractors"
            )
        if self.distractors:
            total = sum(self.distractors.values())
            if abs(total - 1.0) > 1e-6:
                raise ScriptError(f"distractor weights sum to {total}, expected 1")
        for lo, hi in (self.endorse_confidence, self.reject_confidence):
            if not (0 <= lo <= hi <= 100):
                raise ScriptError("confidence ranges must satisfy 0 <= lo <= hi <= 100")


@dataclass(frozen=True)
class MockScript:
    seed: int
    entries: Mapping[tuple[str, str], ScriptEntry]
    ocr_texts: Mapping[str, str] = field(default_factory=dict)

    @staticmethod
    def from_dict(data: Mapping[str, object]) -> "MockScript":
        entries: dict[tuple[str, str], ScriptEntry] = {}
        for key, raw in data.get("entries", {}).items():  # type: ignore[union-attr]
            report_id, sep, field_id = key.partition("::")
            if not sep:
                raise ScriptError(f"entry key {key!r} is not 'report_id::field_id'")
            kwargs = dict(raw)
            if "endorse_confidence" in kwargs:
                kwargs["endorse_confidence"] = tuple(kwargs["endorse_confidence"])
            if "reject_confidence" in kwargs:
                kwargs["reject_confidence"] = tuple(kwargs["reject_confidence"])
            entries[(report_id, field_id)] = ScriptEntry(**kwargs)
        return MockScript(
            seed=int(data.get("seed", 0)),
            entries=entries,
            ocr_texts=dict(data.get("ocr_texts", {})),  # type: ignore[arg-type]
        )

    @staticmethod
    def load(path: str | Path) -> "MockScript":
        return MockScript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class MockBackend(LmmBackend):
    backend_id = "mock"

    def __init__(
        self,
        script: MockScript,
        catalogue: Catalogue | None = None,
        seed: int | None = None,
    ):
        self.script = script
        self.catalogue = catalogue or default_catalogue()
        self.seed = script.seed if seed is None else seed

    # -- sampling ------------------------------------------------------

    def _rng(self, report_id: str, field_id: str, purpose: str, index: int) -> random.Random:
        material = f"{self.seed}|{report_id}|{field_id}|{purpose}|{index}"
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _entry(self, report_id: str, field_id: str) -> ScriptEntry:
        try:
            return self.script.entries[(report_id, field_id)]
        except KeyError:
            raise ScriptMissError(f"no script entry for ({report_id!r}, {field_id!r})") from None

    def complete(self, request: CompletionRequest) -> CompletionBatch:
        entry = self._entry(request.report_id, request.field_id)
        if request.purpose in ("extract_a", "extract_b"):
            texts = [
                self._extraction_sample(entry, request, i)
                for i in range(request.n_samples)
            ]
        elif request.purpose == "validate":
            extracted = self._extracted_value_from_prompt(request.prompt)
            texts = [
                self._validation_sample(entry, request, extracted, i)
                for i in range(request.n_samples)
            ]
        else:
            raise ScriptMissError(f"unknown request purpose {request.purpose!r}")
        return CompletionBatch(raw_texts=tuple(texts), backend_id=self.backend_id)

    def _extraction_sample(self, entry: ScriptEntry, request: CompletionRequest, index: int) -> str:
        rng = self._rng(request.report_id, request.field_id, request.purpose, index)
        key = self.catalogue.get(request.field_id).response_key
        u = rng.random()
        if u < entry.malformed_prob:
            return rng.choice(_MALFORMED_POOL)
        if u < entry.malformed_prob + entry.accuracy:
            surface = entry.truth
        else:
            texts = list(entry.distractors.keys())
            weights = [entry.distractors[t] for t in texts]
            surface = rng.choices(texts, weights=weights, k=1)[0]
        return json.dumps({key: surface})

    def _extracted_value_from_prompt(self, prompt: str) -> str:
        m = EXTRACTED_VALUE_RE.search(prompt)
        if m is None:
            raise ScriptMissError("validation prompt carries no 'Value under review' line")
        return m.group(1)

    def _validation_sample(
        self, entry: ScriptEntry, request: CompletionRequest, extracted: str, index: int
    ) -> str:
        rng = self._rng(request.report_id, request.field_id, request.purpose, index)
        malformed_prob = (
            entry.validator_malformed_prob
            if entry.validator_malformed_prob is not None
            else entry.malformed_prob
        )
        accuracy = (
            entry.validator_accuracy
            if entry.validator_accuracy is not None
            else entry.accuracy
        )
        if rng.random() < malformed_prob:
            return rng.choice(_MALFORMED_POOL)

        extraction_correct = self._same_value(request.field_id, extracted, entry.truth)
        judges_correctly = rng.random() < accuracy
        endorses = extraction_correct == judges_correctly
        if endorses:
            confidence = rng.randint(*entry.endorse_confidence)
            correction = extracted
        else:
            confidence = rng.randint(*entry.reject_confidence)
            if judges_correctly:
                correction = entry.truth
            else:
                # Wrongly rejects a correct extraction; offers a distractor.
                pool = [t for t in entry.distractors if t != extracted]
                correction = rng.choice(pool) if pool else "Not Available"
        return json.dumps(
            {"Correctness": endorses, "Confidence": confidence, "Correction": correction}
        )

    def _same_value(self, field_id: str, a: str, b: str) -> bool:
        na = self.catalogue.normalise(field_id, a)
        nb = self.catalogue.normalise(field_id, b)
        if isinstance(na, NormalisationFailure) or isinstance(nb, NormalisationFailure):
            return a.strip().lower() == b.strip().lower()
        return na.canonical_text() == nb.canonical_text()

    # -- transcription -------------------------------------------------

    def transcribe(
        self, image_bytes: bytes, image_format: str, image_id: str | None = None
    ) -> str:
        if image_format not in SUPPORTED_IMAGE_FORMATS:
            raise UnsupportedFormatError(image_format)
        if image_id is None or image_id not in self.script.ocr_texts:
            raise ScriptMissError(f"no scripted transcription for image {image_id!r}")
        text = self.script.ocr_texts[image_id]
        if not text.strip():
            raise TranscriptionEmptyError(image_id)
        return text
