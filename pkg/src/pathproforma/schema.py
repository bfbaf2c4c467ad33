"""Field catalogue, controlled vocabularies, and value normalisation.

The catalogue defines the eleven colorectal proforma fields, each with a
value kind (categorical, count, length in millimetres, or free text), a
controlled vocabulary where applicable, and an alias table mapping the
surface forms found in reports and model responses onto canonical
values.  The default catalogue ships as packaged JSON
(``data/schema.json``) and can be replaced at load time so vocabularies
can be extended without touching code.

Everything here is immutable after load and safe for concurrent use.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import SchemaError, UnknownFieldError

NOT_AVAILABLE = "Not Available"

# Surface forms that mean "the report does not say", for every field.
_NOT_AVAILABLE_ALIASES = frozenset(
    {
        "not available",
        "n/a",
        "na",
        "none stated",
        "not stated",
        "not specified",
        "not reported",
        "not assessed",
        "cannot be assessed",
        "unavailable",
        "unknown",
    }
)

KIND_CATEGORICAL = "categorical"
KIND_COUNT = "count"
KIND_LENGTH_MM = "length_mm"
KIND_FREE_TEXT = "free_text"
_VALUE_KINDS = (KIND_CATEGORICAL, KIND_COUNT, KIND_LENGTH_MM, KIND_FREE_TEXT)

_LENGTH_RE = re.compile(
    r"^(\d+(?:\.\d+)?)\s*(mm|millimetre?s?|millimeter?s?|cm|centimetre?s?|centimeter?s?)?\.?$",
    re.IGNORECASE,
)
_COUNT_RE = re.compile(r"^\+?(\d+)$")


@dataclass(frozen=True)
class FieldValue:
    """A single normalised field value.

    ``kind`` is one of ``canonical``, ``count``, ``length_mm``,
    ``free_text`` or ``not_available``; ``text`` carries the canonical
    token or free text, ``number`` the count or length.
    """

    kind: str
    text: str | None = None
    number: float | None = None

    @staticmethod
    def canonical(token: str) -> "FieldValue":
        return FieldValue("canonical", text=token)

    @staticmethod
    def count(n: int) -> "FieldValue":
        if n < 0:
            raise ValueError("counts are non-negative")
        return FieldValue("count", number=float(n))

    @staticmethod
    def length_mm(mm: float) -> "FieldValue":
        if mm < 0:
            raise ValueError("lengths are non-negative")
        return FieldValue("length_mm", number=round(float(mm), 1))

    @staticmethod
    def free_text(text: str) -> "FieldValue":
        return FieldValue("free_text", text=text)

    @staticmethod
    def not_available() -> "FieldValue":
        return FieldValue("not_available")

    @staticmethod
    def from_parts(kind: str, text: str) -> "FieldValue":
        """Rebuild a value from its serialised (kind, canonical text) pair."""
        if kind == "not_available":
            return FieldValue.not_available()
        if kind == "count":
            return FieldValue.count(int(text))
        if kind == "length_mm":
            return FieldValue.length_mm(float(text.split()[0]))
        if kind == "free_text":
            return FieldValue.free_text(text)
        if kind == "canonical":
            return FieldValue.canonical(text)
        raise ValueError(f"unknown field value kind {kind!r}")

    @property
    def is_not_available(self) -> bool:
        return self.kind == "not_available"

    def canonical_text(self) -> str:
        """Render the value as the string normalisation round-trips on."""
        if self.kind == "canonical" or self.kind == "free_text":
            return self.text  # type: ignore[return-value]
        if self.kind == "count":
            return str(int(self.number))  # type: ignore[arg-type]
        if self.kind == "length_mm":
            mm = self.number
            if mm == int(mm):  # type: ignore[comparison-overlap]
                return f"{int(mm)} mm"
            return f"{mm} mm"
        return NOT_AVAILABLE


@dataclass(frozen=True)
class NormalisationFailure:
    """Returned (not raised) when a raw string matches no rule.

    Model responses fail to normalise routinely; the failure is counted
    in aggregation denominators rather than stopping a run.
    """

    field_id: str
    raw: str
    reason: str


@dataclass(frozen=True)
class ConsistencyWarning:
    code: str
    message: str
    fields_involved: tuple[str, ...]


@dataclass(frozen=True)
class FieldSpec:
    field_id: str
    display_name: str
    response_key: str
    value_kind: str
    allowed_values: tuple[str, ...] = ()
    alias_map: Mapping[str, str] = field(default_factory=dict)
    allows_not_available: bool = True
    other_escape: bool = False
    filter_aliases: tuple[str, ...] = ()


class Catalogue:
    """An immutable, validated field catalogue."""

    def __init__(self, specs: Iterable[FieldSpec]):
        self.fields: tuple[FieldSpec, ...] = tuple(specs)
        self._by_id = {s.field_id: s for s in self.fields}
        self._filter_index: dict[str, str] = {}
        for spec in self.fields:
            self._filter_index[spec.field_id.lower()] = spec.field_id
            self._filter_index[spec.display_name.lower()] = spec.field_id
            self._filter_index[spec.response_key.lower()] = spec.field_id
            for alias in spec.filter_aliases:
                self._filter_index[alias.lower()] = spec.field_id
        self._validate()

    def _validate(self) -> None:
        if len(self._by_id) != len(self.fields):
            raise SchemaError("duplicate field ids in catalogue")
        for spec in self.fields:
            if spec.value_kind not in _VALUE_KINDS:
                raise SchemaError(
                    f"{spec.field_id}: unknown value kind {spec.value_kind!r}"
                )
            if not spec.allows_not_available:
                raise SchemaError(f"{spec.field_id}: every field accepts Not Available")
            seen: set[str] = set()
            for value in spec.allowed_values:
                if value == NOT_AVAILABLE:
                    raise SchemaError(
                        f"{spec.field_id}: {NOT_AVAILABLE!r} cannot be a canonical value"
                    )
                if value.lower() in seen:
                    raise SchemaError(f"{spec.field_id}: duplicate canonical {value!r}")
                seen.add(value.lower())
            for surface, target in spec.alias_map.items():
                if spec.value_kind == KIND_CATEGORICAL and target not in spec.allowed_values:
                    raise SchemaError(
                        f"{spec.field_id}: alias {surface!r} points at unknown value {target!r}"
                    )

    def field_ids(self) -> list[str]:
        return [s.field_id for s in self.fields]

    def __iter__(self):
        return iter(self.fields)

    def __len__(self) -> int:
        return len(self.fields)

    def get(self, field_id: str) -> FieldSpec:
        try:
            return self._by_id[field_id]
        except KeyError:
            raise UnknownFieldError(field_id) from None

    def resolve_field_id(self, token: str) -> str:
        """Map a user-supplied field name (id, display name, or short
        alias such as ``grade``) onto the catalogue field id."""
        try:
            return self._filter_index[token.strip().lower()]
        except KeyError:
            raise UnknownFieldError(token) from None

    # -- normalisation ------------------------------------------------

    def normalise(self, field_id: str, raw: str) -> FieldValue | NormalisationFailure:
        """Normalise a surface string to a :class:`FieldValue`.

        Lookup is case-insensitive after trimming; "not available" style
        answers map to the NotAvailable variant for every field.
        """
        spec = self.get(field_id)
        text = raw.strip()
        lowered = text.lower()
        if not text:
            return NormalisationFailure(field_id, raw, "empty")
        if lowered in _NOT_AVAILABLE_ALIASES:
            return FieldValue.not_available()
        target = spec.alias_map.get(lowered)
        if target is None and spec.value_kind == KIND_CATEGORICAL:
            for value in spec.allowed_values:
                if value.lower() == lowered:
                    target = value
                    break
        if target is not None:
            text = target
            lowered = target.lower()
        if spec.value_kind == KIND_CATEGORICAL:
            for value in spec.allowed_values:
                if value.lower() == lowered:
                    return FieldValue.canonical(value)
            if spec.other_escape:
                return FieldValue.free_text(text)
            return NormalisationFailure(field_id, raw, "no_alias_match")
        if spec.value_kind == KIND_COUNT:
            m = _COUNT_RE.match(text)
            if not m:
                return NormalisationFailure(field_id, raw, "not_a_count")
            return FieldValue.count(int(m.group(1)))
        if spec.value_kind == KIND_LENGTH_MM:
            m = _LENGTH_RE.match(text)
            if not m:
                return NormalisationFailure(field_id, raw, "not_a_length")
            magnitude = float(m.group(1))
            unit = (m.group(2) or "mm").lower()
            if unit.startswith("c"):
                magnitude *= 10.0
            return FieldValue.length_mm(magnitude)
        # free_text kind
        return FieldValue.free_text(text)

    # -- cross-field consistency --------------------------------------

    def cross_check(self, values: Mapping[str, FieldValue]) -> list[ConsistencyWarning]:
        """Check node counts against node status.

        Warnings never fail a report; they surface count/status
        mismatches for the reviewer.  pN1c is exempt from the
        zero-metastatic check because it denotes tumour deposits without
        nodal metastasis, for which a zero count is the expected state.
        """
        warnings: list[ConsistencyWarning] = []
        examined = values.get("examined_nodes", FieldValue.not_available())
        metastatic = values.get("metastatic_nodes", FieldValue.not_available())
        status = values.get("lymph_node_status", FieldValue.not_available())

        if (
            examined.kind == "count"
            and metastatic.kind == "count"
            and metastatic.number > examined.number
        ):
            warnings.append(
                ConsistencyWarning(
                    code="METASTATIC_EXCEEDS_EXAMINED",
                    message=(
                        f"{int(metastatic.number)} metastatic nodes reported but only "
                        f"{int(examined.number)} examined"
                    ),
                    fields_involved=("metastatic_nodes", "examined_nodes"),
                )
            )
        if status.kind == "canonical" and metastatic.kind == "count":
            n_met = int(metastatic.number)
            if status.text == "pN0" and n_met > 0:
                warnings.append(
                    ConsistencyWarning(
                        code="NODE_STATUS_COUNT_MISMATCH",
                        message=f"lymph node status pN0 with {n_met} metastatic nodes",
                        fields_involved=("lymph_node_status", "metastatic_nodes"),
                    )
                )
            elif status.text in ("pN1a", "pN1b", "pN2a", "pN2b") and n_met == 0:
                warnings.append(
                    ConsistencyWarning(
                        code="NODE_STATUS_COUNT_MISMATCH",
                        message=f"lymph node status {status.text} with 0 metastatic nodes",
                        fields_involved=("lymph_node_status", "metastatic_nodes"),
                    )
                )
        return warnings

    # -- rendering -----------------------------------------------------

    def render_proforma(
        self,
        values: Mapping[str, FieldValue],
        confidences: Mapping[str, float | None] | None = None,
        overridden: Iterable[str] = (),
    ) -> str:
        """Render the standardised plain-text proforma.

        Always emits one line per catalogue field in catalogue order;
        fields absent from ``values`` render as Not Available.  The
        confidence suffix is omitted for Not Available values, and
        reviewer-overridden fields gain a trailing marker.
        """
        confidences = confidences or {}
        overridden = set(overridden)
        lines = []
        for spec in self.fields:
            value = values.get(spec.field_id, FieldValue.not_available())
            line = f"{spec.display_name}: {value.canonical_text()}"
            confidence = confidences.get(spec.field_id)
            if confidence is not None and not value.is_not_available:
                line += f" [confidence {round(confidence * 100):d}%]"
            if spec.field_id in overridden:
                line += " (reviewer override)"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _specs_from_mapping(data: Mapping[str, object]) -> list[FieldSpec]:
    specs = []
    for field_id, entry in data.items():
        if field_id.startswith("_"):
            continue
        if not isinstance(entry, dict):
            raise SchemaError(f"{field_id}: expected an object")
        try:
            specs.append(
                FieldSpec(
                    field_id=field_id,
                    display_name=entry["display_name"],
                    response_key=entry.get("response_key", entry["display_name"]),
                    value_kind=entry["value_kind"],
                    allowed_values=tuple(entry.get("allowed_values", ())),
                    alias_map={
                        k.strip().lower(): v for k, v in entry.get("aliases", {}).items()
                    },
                    allows_not_available=entry.get("allows_not_available", True),
                    other_escape=entry.get("other_escape", False),
                    filter_aliases=tuple(entry.get("filter_aliases", ())),
                )
            )
        except KeyError as exc:
            raise SchemaError(f"{field_id}: missing required key {exc}") from None
    return specs


def load_catalogue(path: str | Path | None = None) -> Catalogue:
    """Load a catalogue from ``path``, or the packaged default."""
    if path is None:
        text = resources.files("pathproforma.data").joinpath("schema.json").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    return Catalogue(_specs_from_mapping(json.loads(text)))


_DEFAULT: Catalogue | None = None


def default_catalogue() -> Catalogue:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_catalogue()
        if len(_DEFAULT) != 11:
            raise SchemaError("default catalogue must define exactly 11 fields")
    return _DEFAULT


def field_catalogue() -> list[FieldSpec]:
    """The eleven proforma fields, in reporting order."""
    return list(default_catalogue().fields)


def normalise(field_id: str, raw: str) -> FieldValue | NormalisationFailure:
    """Normalise against the default catalogue."""
    return default_catalogue().normalise(field_id, raw)
