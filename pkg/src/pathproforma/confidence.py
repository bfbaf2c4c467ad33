"""Confidence fusion, final-value selection, and sigmoid calibration.

The raw confidence of a field is the arithmetic mean of five fractions:
the extraction majority frequency, the frequencies of the winning
correctness and correction labels, the validator's mean self-reported
confidence, and its rate of agreement with the extractor.  Any single
factor can look good while the extraction is wrong; averaging them makes
the score harder to fool.

Raw confidences cluster high (sampled models are consistent and
overconfident), so a per-field two-parameter sigmoid
``p = 1 / (1 + exp(a * c + b))`` is fitted by maximum likelihood against
smoothed targets and used to rescale them.  Rescaling is strictly
monotone whenever ``a != 0``, so per-field rankings - and therefore
ranking metrics - are unchanged by calibration.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateLabelsError, FieldMismatchError
from .extraction import ExtractionResult
from .schema import FieldValue
from .validation import ValidationResult

log = logging.getLogger(__name__)

PROVENANCE_EXTRACTOR = "extractor"
PROVENANCE_VALIDATOR = "validator_correction"

_CLAMP = 1e-6


@dataclass(frozen=True)
class FusedConfidence:
    field_id: str
    factors: tuple[float, float, float, float, float]
    raw_c: float
    calibrated: float | None = None


def fuse(extraction: ExtractionResult, validation: ValidationResult) -> FusedConfidence:
    """Average the five confidence factors into the raw field confidence."""
    if extraction.field_id != validation.field_id:
        raise FieldMismatchError(
            f"{extraction.field_id!r} vs {validation.field_id!r}"
        )
    factors = (
        extraction.e_confidence,
        validation.v_correct,
        validation.v_confidence,
        validation.v_correction,
        validation.v_pct_agree,
    )
    return FusedConfidence(
        field_id=extraction.field_id,
        factors=factors,
        raw_c=sum(factors) / 5.0,
    )


def final_value(
    extraction: ExtractionResult, validation: ValidationResult
) -> tuple[FieldValue, str]:
    """Pick the final field value and say where it came from.

    An endorsing validator majority keeps the extracted value; a
    rejecting majority replaces it with the majority correction (which
    may itself be Not Available).
    """
    if extraction.field_id != validation.field_id:
        raise FieldMismatchError(
            f"{extraction.field_id!r} vs {validation.field_id!r}"
        )
    if validation.majority_correctness:
        return extraction.value, PROVENANCE_EXTRACTOR
    return validation.majority_correction, PROVENANCE_VALIDATOR


# ---------------------------------------------------------------------------
# Platt calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlattFit:
    a: float
    b: float
    n_fit: int
    nll_before: float  # best constant predictor against the fitting targets
    nll_after: float  # fitted sigmoid against the fitting targets
    iterations: int


@dataclass
class CalibrationModel:
    """Per-field sigmoid coefficients plus fit diagnostics."""

    entries: dict[str, PlattFit] = field(default_factory=dict)

    def has(self, field_id: str) -> bool:
        return field_id in self.entries

    def apply(self, field_id: str, raw_c: float) -> tuple[float, bool]:
        """Calibrate ``raw_c``; fall through untouched for unknown fields.

        Returns ``(confidence, passthrough)``.
        """
        fit = self.entries.get(field_id)
        if fit is None:
            return raw_c, True
        return _sigmoid(fit.a * raw_c + fit.b), False

    # -- persistence ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            field_id: {
                "a": fit.a,
                "b": fit.b,
                "n_fit": fit.n_fit,
                "nll_before": fit.nll_before,
                "nll_after": fit.nll_after,
            }
            for field_id, fit in self.entries.items()
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @staticmethod
    def load(path: str | Path) -> "CalibrationModel":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = {
            field_id: PlattFit(
                a=entry["a"],
                b=entry["b"],
                n_fit=entry.get("n_fit", 0),
                nll_before=entry.get("nll_before", float("nan")),
                nll_after=entry.get("nll_after", float("nan")),
                iterations=entry.get("iterations", 0),
            )
            for field_id, entry in data.items()
        }
        return CalibrationModel(entries=entries)


def _sigmoid(z: float) -> float:
    if z >= 0:
        p = 1.0 / (1.0 + math.exp(min(z, 500.0)))
    else:
        e = math.exp(max(z, -500.0))
        p = 1.0 / (1.0 + e)
    return min(1.0 - _CLAMP, max(_CLAMP, p))


def fit_platt(
    field_id: str, pairs: Sequence[tuple[float, int]], max_iterations: int = 200
) -> PlattFit:
    """Fit sigmoid coefficients to (confidence, label) pairs.

    Labels are +1/-1.  Targets are smoothed the standard way, which
    keeps coefficients finite on separable data; the fit runs damped
    Newton steps until the gradient's infinity norm drops below 1e-8.
    Both stored NLL diagnostics are measured against the smoothed
    fitting targets, where the sigmoid family contains every constant
    predictor; should the iteration ever stall above the constant
    baseline, the constant itself is stored instead.
    """
    if len(pairs) < 10:
        raise ValueError(f"{field_id}: need at least 10 pairs, got {len(pairs)}")
    scores = np.asarray([c for c, _ in pairs], dtype=float)
    labels = np.asarray([y for _, y in pairs], dtype=int)
    n_pos = int((labels > 0).sum())
    n_neg = int((labels < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"{field_id}: calibration needs both classes (got {n_pos} positive, {n_neg} negative)"
        )

    hi_target = (n_pos + 1.0) / (n_pos + 2.0)
    lo_target = 1.0 / (n_neg + 2.0)
    targets = np.where(labels > 0, hi_target, lo_target)

    def target_nll(probs: np.ndarray) -> float:
        p = np.clip(probs, _CLAMP, 1.0 - _CLAMP)
        return float(-(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)).mean())

    def smoothed_nll(a: float, b: float) -> float:
        z = a * scores + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
        return target_nll(p)

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    objective = smoothed_nll(a, b)
    damping = 1e-4
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        z = a * scores + b
        p = np.clip(1.0 / (1.0 + np.exp(np.clip(z, -500, 500))), _CLAMP, 1.0 - _CLAMP)
        # dNLL/dz = t - p under p = sigmoid(-z)
        residual = targets - p
        grad_a = float((residual * scores).sum())
        grad_b = float(residual.sum())
        if max(abs(grad_a), abs(grad_b)) < 1e-8:
            break
        w = p * (1.0 - p)
        h_aa = float((w * scores * scores).sum())
        h_ab = float((w * scores).sum())
        h_bb = float(w.sum())
        stepped = False
        for _ in range(60):
            det = (h_aa + damping) * (h_bb + damping) - h_ab * h_ab
            if det <= 0:
                damping *= 10.0
                continue
            delta_a = -((h_bb + damping) * grad_a - h_ab * grad_b) / det
            delta_b = -((h_aa + damping) * grad_b - h_ab * grad_a) / det
            candidate = smoothed_nll(a + delta_a, b + delta_b)
            if candidate <= objective + 1e-12:
                a, b = a + delta_a, b + delta_b
                objective = candidate
                damping = max(damping * 0.1, 1e-12)
                stepped = True
                break
            damping *= 10.0
        if not stepped:
            break

    nll_after = smoothed_nll(a, b)

    # Baseline: best constant predictor, expressible within the family
    # as a = 0.  Mean target minimises cross-entropy against the targets.
    mean_target = float(targets.mean())
    constant_b = math.log((1.0 - mean_target) / mean_target)
    nll_constant = target_nll(np.full(len(labels), mean_target))
    if nll_after > nll_constant:
        a, b = 0.0, constant_b
        nll_after = nll_constant
        log.warning("%s: sigmoid fit stalled above constant baseline; storing constant", field_id)

    return PlattFit(
        a=a,
        b=b,
        n_fit=len(pairs),
        nll_before=nll_constant,
        nll_after=nll_after,
        iterations=iterations,
    )


def fit_calibration_model(
    pairs_by_field: dict[str, Sequence[tuple[float, int]]]
) -> tuple[CalibrationModel, dict[str, str]]:
    """Fit every field with usable pairs; report why the rest were skipped."""
    model = CalibrationModel()
    skipped: dict[str, str] = {}
    for field_id, pairs in pairs_by_field.items():
        try:
            model.entries[field_id] = fit_platt(field_id, pairs)
        except (DegenerateLabelsError, ValueError) as exc:
            skipped[field_id] = str(exc)
    return model, skipped


def apply_calibration(
    model: CalibrationModel, field_id: str, raw_c: float
) -> tuple[float, bool]:
    """Rescale a raw confidence; unknown fields pass through flagged."""
    return model.apply(field_id, raw_c)
