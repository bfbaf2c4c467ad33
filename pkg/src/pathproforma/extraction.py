"""Extraction agent: sample completions per field and majority-aggregate.

For each field the agent draws half its samples against each of the two
prompt variants, parses every response tolerantly (code fences and
surrounding prose are stripped, the expected key is matched
case-insensitively), normalises the value, and returns the most frequent
value together with its frequency among all samples.  Parse failures
stay in the denominator: malformed output is evidence of unreliability,
not a sample to discard.

Tie handling: a concrete value always beats Not Available, and ties
between concrete values go to the lexicographically smallest canonical
rendering.  The winner's frequency is unchanged by tie-breaking, so tied
results keep their low confidence.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

from .backends.base import CompletionRequest, LmmBackend
from .errors import EmptyInputError, TransportError
from .prompts import TemplateLibrary, build_extraction_prompts
from .schema import (
    NOT_AVAILABLE,
    Catalogue,
    FieldValue,
    NormalisationFailure,
    default_catalogue,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParseFailure:
    """Why a raw model response could not be turned into a FieldValue."""

    reason: str  # no_json | wrong_key | normalisation_failure
    detail: str = ""


@dataclass(frozen=True)
class ExtractionSample:
    raw_text: str
    parsed: FieldValue | ParseFailure
    prompt_variant: str  # "a" | "b"

    @property
    def ok(self) -> bool:
        return isinstance(self.parsed, FieldValue)


@dataclass(frozen=True)
class ExtractionResult:
    field_id: str
    value: FieldValue
    e_confidence: float  # winner frequency among all samples
    tally: dict[str, int] = field(default_factory=dict)
    n_total: int = 0
    n_unparseable: int = 0
    degraded: bool = False


def find_json_object(text: str) -> dict | None:
    """Locate and decode the first JSON object embedded in ``text``.

    Scans for brace-balanced candidates so fenced or prose-wrapped
    payloads parse without special-casing.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        decoded = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(decoded, dict):
                        return decoded
                    break
        start = text.find("{", start + 1)
    return None


def _key_forms(field_id: str, catalogue: Catalogue) -> set[str]:
    spec = catalogue.get(field_id)
    forms = {spec.response_key, spec.display_name, field_id, field_id.replace("_", " ")}
    return {f.strip().lower() for f in forms}


def lookup_key(payload: dict, field_id: str, catalogue: Catalogue):
    """Fetch the expected response key from a decoded payload.

    Key matching ignores case and underscore/space differences; extra
    keys are ignored.  Returns a ``(found, value)`` pair.
    """
    wanted = _key_forms(field_id, catalogue)
    for key, value in payload.items():
        if isinstance(key, str) and key.strip().lower().replace("_", " ") in wanted:
            return True, value
    return False, None


def parse_extraction_payload(
    raw_text: str, field_id: str, catalogue: Catalogue | None = None
) -> FieldValue | ParseFailure:
    """Parse one raw completion into a FieldValue, or say why not."""
    catalogue = catalogue or default_catalogue()
    payload = find_json_object(raw_text)
    if payload is None:
        return ParseFailure("no_json")
    found, value = lookup_key(payload, field_id, catalogue)
    if not found:
        return ParseFailure("wrong_key", detail=",".join(map(str, payload.keys())))
    if isinstance(value, bool) or value is None or isinstance(value, (dict, list)):
        return ParseFailure("normalisation_failure", detail=repr(value))
    normalised = catalogue.normalise(field_id, str(value))
    if isinstance(normalised, NormalisationFailure):
        return ParseFailure("normalisation_failure", detail=normalised.reason)
    return normalised


def sample_extractions(
    report_id: str,
    report_text: str,
    field_id: str,
    backend: LmmBackend,
    n_extractor: int = 20,
    temperature: float = 1.0,
    max_tokens: int = 300,
    library: TemplateLibrary | None = None,
    catalogue: Catalogue | None = None,
) -> tuple[list[ExtractionSample], bool]:
    """Draw ``n_extractor`` samples, half against each prompt variant.

    Returns the samples and a degraded flag; a transport failure on one
    variant degrades the batch instead of failing the field.
    """
    if n_extractor < 2 or n_extractor % 2:
        raise ValueError("n_extractor must be even and >= 2")
    catalogue = catalogue or default_catalogue()
    prompt_a, prompt_b = build_extraction_prompts(
        field_id, report_text, library=library, catalogue=catalogue
    )
    per_variant = n_extractor // 2
    samples: list[ExtractionSample] = []
    degraded = False
    for variant, prompt in (("a", prompt_a), ("b", prompt_b)):
        request = CompletionRequest(
            prompt=prompt,
            n_samples=per_variant,
            temperature=temperature,
            max_tokens=max_tokens,
            report_id=report_id,
            field_id=field_id,
            purpose=f"extract_{variant}",
        )
        try:
            batch = backend.complete(request)
        except TransportError as exc:
            log.warning("extraction variant %s failed for %s/%s: %s", variant, report_id, field_id, exc)
            degraded = True
            continue
        for raw in batch.raw_texts:
            samples.append(
                ExtractionSample(
                    raw_text=raw,
                    parsed=parse_extraction_payload(raw, field_id, catalogue),
                    prompt_variant=variant,
                )
            )
    return samples, degraded


def pick_winner(tally: Counter) -> str | None:
    """Majority value under the tie rule; None for an empty tally."""
    if not tally:
        return None
    top = max(tally.values())
    tied = [value for value, count in tally.items() if count == top]
    concrete = [value for value in tied if value != NOT_AVAILABLE]
    if concrete:
        return min(concrete)
    return NOT_AVAILABLE


def aggregate_extractions(
    samples: list[ExtractionSample],
    field_id: str,
    catalogue: Catalogue | None = None,
    degraded: bool = False,
) -> ExtractionResult:
    """Majority-vote the parsed samples into a single value.

    The winner's frequency over *all* samples (parse failures included)
    is the extraction confidence.  All-unparseable batches yield
    Not Available at confidence zero.
    """
    if not samples:
        raise EmptyInputError("no extraction samples to aggregate")
    catalogue = catalogue or default_catalogue()
    tally: Counter = Counter()
    by_rendering: dict[str, FieldValue] = {}
    n_unparseable = 0
    for sample in samples:
        if isinstance(sample.parsed, ParseFailure):
            n_unparseable += 1
            continue
        rendering = sample.parsed.canonical_text()
        tally[rendering] += 1
        by_rendering.setdefault(rendering, sample.parsed)
    n_total = len(samples)
    winner = pick_winner(tally)
    if winner is None:
        return ExtractionResult(
            field_id=field_id,
            value=FieldValue.not_available(),
            e_confidence=0.0,
            tally={},
            n_total=n_total,
            n_unparseable=n_unparseable,
            degraded=True,
        )
    value = by_rendering.get(winner, FieldValue.not_available())
    return ExtractionResult(
        field_id=field_id,
        value=value,
        e_confidence=tally[winner] / n_total,
        tally=dict(sorted(tally.items())),
        n_total=n_total,
        n_unparseable=n_unparseable,
        degraded=degraded or n_unparseable == n_total,
    )
