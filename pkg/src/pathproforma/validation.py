"""Validation agent: judge the extracted value and aggregate the verdicts.

Each validation sample carries three labels: whether the extracted value
is correct, a self-reported confidence out of 100, and a correction (a
restatement when the value is endorsed).  Labels are majority-aggregated
with the same tie rule as extraction, and the result additionally tracks
how often the validator endorsed the extractor - the agreement rate that
feeds confidence fusion.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from dataclasses import field as dataclass_field

from .backends.base import CompletionRequest, LmmBackend
from .errors import EmptyInputError, TransportError
from .extraction import find_json_object, pick_winner
from .prompts import TemplateLibrary, build_validation_prompt
from .schema import Catalogue, FieldValue, NormalisationFailure, default_catalogue

log = logging.getLogger(__name__)

_TRUE_WORDS = {"true", "yes", "correct", "right"}
_FALSE_WORDS = {"false", "no", "incorrect", "wrong"}


@dataclass(frozen=True)
class ValidationSample:
    parse_ok: bool
    correctness: bool = False
    self_confidence: int = 0  # 0..100
    correction: FieldValue = FieldValue.not_available()
    raw_text: str = ""


@dataclass(frozen=True)
class ValidationResult:
    field_id: str
    majority_correctness: bool
    v_correct: float  # frequency of the winning correctness label
    v_confidence: float  # mean self-reported confidence, rescaled to [0,1]
    majority_correction: FieldValue
    v_correction: float  # frequency of the winning correction
    v_pct_agree: float  # fraction of samples endorsing the extractor
    n_total: int
    n_unparseable: int
    degraded: bool = False
    correctness_tally: dict[str, int] = dataclass_field(default_factory=dict)
    correction_tally: dict[str, int] = dataclass_field(default_factory=dict)


def _parse_correctness(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in _TRUE_WORDS:
            return True
        if lowered in _FALSE_WORDS:
            return False
    return None


def _parse_confidence(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return max(0, min(100, round(value)))
    if isinstance(value, str):
        try:
            return max(0, min(100, round(float(value.strip()))))
        except ValueError:
            return None
    return None


def parse_validation_payload(
    raw_text: str, field_id: str, catalogue: Catalogue | None = None
) -> ValidationSample:
    """Parse one raw validation response; failures are recorded, not raised."""
    catalogue = catalogue or default_catalogue()
    failed = ValidationSample(parse_ok=False, raw_text=raw_text)
    payload = find_json_object(raw_text)
    if payload is None:
        return failed
    fields = {k.strip().lower(): v for k, v in payload.items() if isinstance(k, str)}
    correctness = _parse_correctness(fields.get("correctness"))
    confidence = _parse_confidence(fields.get("confidence"))
    raw_correction = fields.get("correction")
    if correctness is None or confidence is None or not isinstance(raw_correction, str):
        return failed
    correction = catalogue.normalise(field_id, raw_correction)
    if isinstance(correction, NormalisationFailure):
        return failed
    return ValidationSample(
        parse_ok=True,
        correctness=correctness,
        self_confidence=confidence,
        correction=correction,
        raw_text=raw_text,
    )


def sample_validations(
    report_id: str,
    report_text: str,
    field_id: str,
    extracted: FieldValue,
    backend: LmmBackend,
    n_validator: int = 10,
    temperature: float = 1.0,
    max_tokens: int = 300,
    library: TemplateLibrary | None = None,
    catalogue: Catalogue | None = None,
) -> tuple[list[ValidationSample], bool]:
    """Draw ``n_validator`` judgements of the extracted value.

    Returns the samples and a degraded flag (set on transport loss).
    """
    if n_validator < 1:
        raise ValueError("n_validator must be >= 1")
    catalogue = catalogue or default_catalogue()
    prompt = build_validation_prompt(
        field_id, report_text, extracted, library=library, catalogue=catalogue
    )
    request = CompletionRequest(
        prompt=prompt,
        n_samples=n_validator,
        temperature=temperature,
        max_tokens=max_tokens,
        report_id=report_id,
        field_id=field_id,
        purpose="validate",
    )
    try:
        batch = backend.complete(request)
    except TransportError as exc:
        log.warning("validation failed for %s/%s: %s", report_id, field_id, exc)
        return [], True
    samples = [
        parse_validation_payload(raw, field_id, catalogue) for raw in batch.raw_texts
    ]
    return samples, False


def aggregate_validations(
    samples: list[ValidationSample],
    extracted: FieldValue,
    field_id: str,
    degraded: bool = False,
) -> ValidationResult:
    """Majority-aggregate the three validation labels.

    Unparseable samples stay in every denominator.  A batch with no
    parseable sample gets all fractions zero and a Not Available
    correction, which forces the conservative final-value path.
    """
    if not samples:
        raise EmptyInputError("no validation samples to aggregate")
    n_total = len(samples)
    parsed = [s for s in samples if s.parse_ok]
    n_unparseable = n_total - len(parsed)

    if not parsed:
        return ValidationResult(
            field_id=field_id,
            majority_correctness=False,
            v_correct=0.0,
            v_confidence=0.0,
            majority_correction=FieldValue.not_available(),
            v_correction=0.0,
            v_pct_agree=0.0,
            n_total=n_total,
            n_unparseable=n_unparseable,
            degraded=True,
        )

    # Correctness label: boolean majority; ties go to False, which is
    # the conservative (correction-taking) side.
    true_count = sum(1 for s in parsed if s.correctness)
    false_count = len(parsed) - true_count
    majority_correctness = true_count > false_count
    v_correct = max(true_count, false_count) / n_total
    correctness_tally = {"true": true_count, "false": false_count}

    v_confidence = sum(s.self_confidence for s in parsed) / len(parsed) / 100.0

    correction_tally: Counter = Counter()
    by_rendering: dict[str, FieldValue] = {}
    for s in parsed:
        rendering = s.correction.canonical_text()
        correction_tally[rendering] += 1
        by_rendering.setdefault(rendering, s.correction)
    winner = pick_winner(correction_tally)
    majority_correction = by_rendering.get(winner, FieldValue.not_available())
    v_correction = correction_tally[winner] / n_total

    v_pct_agree = true_count / n_total

    return ValidationResult(
        field_id=field_id,
        majority_correctness=majority_correctness,
        v_correct=v_correct,
        v_confidence=v_confidence,
        majority_correction=majority_correction,
        v_correction=v_correction,
        v_pct_agree=v_pct_agree,
        n_total=n_total,
        n_unparseable=n_unparseable,
        degraded=degraded,
        correctness_tally=correctness_tally,
        correction_tally=dict(sorted(correction_tally.items())),
    )
