"""Prompt assembly for the extraction and validation agents.

Each field carries three templates (two extraction variants and one
validation template), every template being five components: a role, a
task with category definitions and their common aliases, a response
format constraint, worked example pairs, and an instruction for handling
reports that lack the information.  The two extraction variants differ
in wording and component order on purpose; disagreement between them
feeds the frequency-based confidence downstream.

Templates ship as packaged JSON (``data/prompts.json``) and can be
replaced at load time.  Assembly is pure: identical inputs produce
byte-identical prompts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import SchemaError, UnknownFieldError
from .schema import Catalogue, FieldValue, default_catalogue

VARIANTS = ("extractor_a", "extractor_b", "validator")

EXTRACTED_VALUE_PLACEHOLDER = "[[EXTRACTED_VALUE]]"

# The validator task template must render the value with this exact
# phrasing; the mock backend recovers the value under review by matching
# it.  Non-greedy so trailing quoted text cannot bleed into the capture
# (values themselves never contain double quotes).
EXTRACTED_VALUE_RE = re.compile(r'Value under review: "(.*?)"')

REPORT_BEGIN = "BEGIN REPORT"
REPORT_END = "END REPORT"


@dataclass(frozen=True)
class PromptTemplate:
    field_id: str
    variant: str
    role_text: str
    task_text: str
    format_constraint_text: str
    example_pairs: tuple[tuple[str, str], ...]
    uncertainty_text: str

    def _components(self) -> dict[str, str]:
        examples = "\n\n".join(
            f'Example:\nReport excerpt: "{excerpt}"\nExpected response: {response}'
            for excerpt, response in self.example_pairs
        )
        return {
            "role": self.role_text,
            "task": self.task_text,
            "format": self.format_constraint_text,
            "examples": examples,
            "uncertainty": self.uncertainty_text,
        }


# Component order by variant: variant b moves the format constraint to
# the end, exploiting the model's sensitivity to prompt structure.
_COMPONENT_ORDER = {
    "extractor_a": ("role", "task", "format", "examples", "uncertainty"),
    "extractor_b": ("role", "task", "examples", "uncertainty", "format"),
    "validator": ("role", "task", "format", "examples", "uncertainty"),
}


def _compose(template: PromptTemplate, report_text: str) -> str:
    parts = template._components()
    body = "\n\n".join(parts[name] for name in _COMPONENT_ORDER[template.variant])
    return f"{body}\n\n{REPORT_BEGIN}\n{report_text}\n{REPORT_END}"


class TemplateLibrary:
    """Validated set of prompt templates covering a catalogue."""

    def __init__(self, templates: Mapping[tuple[str, str], PromptTemplate]):
        self._templates = dict(templates)
        self._validate()

    def _validate(self) -> None:
        fields = {field_id for field_id, _ in self._templates}
        for field_id in fields:
            variants = {}
            for name in VARIANTS:
                template = self._templates.get((field_id, name))
                if template is None:
                    raise SchemaError(f"{field_id}: missing template variant {name}")
                for component, text in template._components().items():
                    if not text.strip():
                        raise SchemaError(
                            f"{field_id}/{name}: empty prompt component {component}"
                        )
                variants[name] = template
            a, b = variants["extractor_a"], variants["extractor_b"]
            if (
                a.format_constraint_text == b.format_constraint_text
                and a.example_pairs == b.example_pairs
            ):
                raise SchemaError(
                    f"{field_id}: extractor variants must differ in format text or example order"
                )
            validator = variants["validator"]
            if EXTRACTED_VALUE_PLACEHOLDER not in validator.task_text:
                raise SchemaError(
                    f"{field_id}/validator: task text lacks {EXTRACTED_VALUE_PLACEHOLDER}"
                )

    def field_ids(self) -> set[str]:
        return {field_id for field_id, _ in self._templates}

    def get(self, field_id: str, variant: str) -> PromptTemplate:
        try:
            return self._templates[(field_id, variant)]
        except KeyError:
            raise UnknownFieldError(field_id) from None

    def check_covers(self, catalogue: Catalogue) -> None:
        """Raise unless every catalogue field has all three variants."""
        missing = [s.field_id for s in catalogue if s.field_id not in self.field_ids()]
        if missing:
            raise SchemaError(f"prompt templates missing for fields: {missing}")


def load_templates(path: str | Path | None = None) -> TemplateLibrary:
    if path is None:
        text = resources.files("pathproforma.data").joinpath("prompts.json").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    templates: dict[tuple[str, str], PromptTemplate] = {}
    for field_id, entry in data.items():
        if field_id.startswith("_"):
            continue
        for variant in VARIANTS:
            raw = entry.get(variant)
            if raw is None:
                raise SchemaError(f"{field_id}: missing template variant {variant}")
            templates[(field_id, variant)] = PromptTemplate(
                field_id=field_id,
                variant=variant,
                role_text=raw["role"],
                task_text=raw["task"],
                format_constraint_text=raw["format"],
                example_pairs=tuple((e[0], e[1]) for e in raw["examples"]),
                uncertainty_text=raw["uncertainty"],
            )
    return TemplateLibrary(templates)


_DEFAULT: TemplateLibrary | None = None


def default_templates() -> TemplateLibrary:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_templates()
    return _DEFAULT


def build_extraction_prompts(
    field_id: str,
    report_text: str,
    library: TemplateLibrary | None = None,
    catalogue: Catalogue | None = None,
) -> tuple[str, str]:
    """Build both extraction prompt variants for a field."""
    if not report_text:
        raise ValueError("report_text must be non-empty")
    catalogue = catalogue or default_catalogue()
    catalogue.get(field_id)  # raises UnknownFieldError
    library = library or default_templates()
    prompt_a = _compose(library.get(field_id, "extractor_a"), report_text)
    prompt_b = _compose(library.get(field_id, "extractor_b"), report_text)
    return prompt_a, prompt_b


def build_validation_prompt(
    field_id: str,
    report_text: str,
    extracted: FieldValue,
    library: TemplateLibrary | None = None,
    catalogue: Catalogue | None = None,
) -> str:
    """Build the validation prompt, embedding the extracted value verbatim."""
    if not report_text:
        raise ValueError("report_text must be non-empty")
    catalogue = catalogue or default_catalogue()
    catalogue.get(field_id)
    library = library or default_templates()
    template = library.get(field_id, "validator")
    task = template.task_text.replace(
        EXTRACTED_VALUE_PLACEHOLDER, extracted.canonical_text()
    )
    rendered = PromptTemplate(
        field_id=template.field_id,
        variant=template.variant,
        role_text=template.role_text,
        task_text=task,
        format_constraint_text=template.format_constraint_text,
        example_pairs=template.example_pairs,
        uncertainty_text=template.uncertainty_text,
    )
    return _compose(rendered, report_text)
