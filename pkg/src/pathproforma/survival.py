"""Survival utilities for checking the prognostic value of extracted fields.

Provides the product-limit survival estimator, the two-group log-rank
test, Harrell's concordance index over an externally supplied risk
score, a median-split stratifier, and a univariate screen that scores
each proforma field by the c-index of its ordinally encoded value.

Conventions: a subject censored exactly at an event time still counts as
at risk at that time, and a pair is comparable only when the earlier
subject's event was observed strictly before the other subject's
observed or censoring time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy.stats import chi2

from .errors import (
    EmptyInputError,
    MissingOutcomesError,
    NoComparablePairsError,
    NoEventsError,
)
from .schema import Catalogue, FieldValue, default_catalogue


@dataclass(frozen=True)
class SurvivalRecord:
    subject_id: str
    time: float  # days
    event: bool  # True = event observed, False = censored

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValueError("time must be non-negative")


@dataclass(frozen=True)
class KmPoint:
    time: float
    survival: float
    at_risk: int
    events: int


@dataclass(frozen=True)
class KmCurve:
    points: tuple[KmPoint, ...]

    def survival_at(self, time: float) -> float:
        s = 1.0
        for point in self.points:
            if point.time <= time:
                s = point.survival
            else:
                break
        return s


def kaplan_meier(records: Sequence[SurvivalRecord]) -> KmCurve:
    """Product-limit estimate of the survival function.

    One step per distinct event time; censorings only shrink the risk
    set.  The curve starts at (0, 1).
    """
    if not records:
        raise EmptyInputError("no survival records")
    event_times = sorted({r.time for r in records if r.event})
    points = [KmPoint(time=0.0, survival=1.0, at_risk=len(records), events=0)]
    survival = 1.0
    for t in event_times:
        at_risk = sum(1 for r in records if r.time >= t)
        events = sum(1 for r in records if r.event and r.time == t)
        survival *= 1.0 - events / at_risk
        points.append(KmPoint(time=t, survival=survival, at_risk=at_risk, events=events))
    return KmCurve(points=tuple(points))


def log_rank(
    group_a: Sequence[SurvivalRecord], group_b: Sequence[SurvivalRecord]
) -> tuple[float, float]:
    """Two-group log-rank test; returns (chi-square statistic, p-value)."""
    if not group_a or not group_b:
        raise EmptyInputError("both groups must be non-empty")
    records = [(r, 0) for r in group_a] + [(r, 1) for r in group_b]
    if not any(r.event for r, _ in records):
        raise NoEventsError("log-rank needs at least one observed event")
    event_times = sorted({r.time for r, _ in records if r.event})
    observed_minus_expected = 0.0
    variance = 0.0
    for t in event_times:
        at_risk_a = sum(1 for r, g in records if g == 0 and r.time >= t)
        at_risk_b = sum(1 for r, g in records if g == 1 and r.time >= t)
        n = at_risk_a + at_risk_b
        deaths = sum(1 for r, _ in records if r.event and r.time == t)
        deaths_a = sum(1 for r, g in records if g == 0 and r.event and r.time == t)
        if n == 0 or deaths == 0:
            continue
        expected_a = deaths * at_risk_a / n
        observed_minus_expected += deaths_a - expected_a
        if n > 1:
            variance += (
                deaths
                * (at_risk_a / n)
                * (at_risk_b / n)
                * (n - deaths)
                / (n - 1)
            )
    if variance == 0.0:
        return 0.0, 1.0
    statistic = observed_minus_expected**2 / variance
    p_value = float(chi2.sf(statistic, df=1))
    return statistic, p_value


def concordance_index(
    scores: Mapping[str, float], records: Sequence[SurvivalRecord]
) -> float:
    """Fraction of comparable pairs ranked concordantly by risk score.

    Higher score must mean earlier event.  Tied scores earn half credit;
    pairs that censoring leaves unordered are excluded.
    """
    missing = [r.subject_id for r in records if r.subject_id not in scores]
    if missing:
        raise KeyError(f"risk scores missing for subjects: {missing[:5]}")
    concordant = 0.0
    comparable = 0
    for i, first in enumerate(records):
        for second in records[i + 1 :]:
            if first.time == second.time:
                continue
            earlier, later = (
                (first, second) if first.time < second.time else (second, first)
            )
            if not earlier.event:
                continue
            comparable += 1
            earlier_score = scores[earlier.subject_id]
            later_score = scores[later.subject_id]
            if earlier_score > later_score:
                concordant += 1.0
            elif earlier_score == later_score:
                concordant += 0.5
    if comparable == 0:
        raise NoComparablePairsError("no pair is orderable under censoring")
    return concordant / comparable


@dataclass(frozen=True)
class StratifiedGroups:
    high_risk: tuple[str, ...]
    low_risk: tuple[str, ...]
    degenerate: bool  # True when the high-risk group came out empty


def stratify_median(scores: Mapping[str, float]) -> StratifiedGroups:
    """Split subjects at the median score; median ties go low-risk."""
    if len(scores) < 2:
        raise ValueError("need at least 2 subjects to stratify")
    values = sorted(scores.values())
    n = len(values)
    if n % 2:
        median = values[n // 2]
    else:
        median = (values[n // 2 - 1] + values[n // 2]) / 2.0
    high = tuple(sorted(sid for sid, v in scores.items() if v > median))
    low = tuple(sorted(sid for sid, v in scores.items() if v <= median))
    return StratifiedGroups(high_risk=high, low_risk=low, degenerate=not high)


# ---------------------------------------------------------------------------
# Univariate field screen
# ---------------------------------------------------------------------------


def encode_field_value(
    value: FieldValue, field_id: str, catalogue: Catalogue
) -> float | None:
    """Encode a field value as a risk score, or None when unusable.

    Categorical values take their rank in the controlled vocabulary
    (which is ordered by progression for the staging fields); counts and
    lengths are used as-is; free text and Not Available are excluded.
    """
    if value.kind == "canonical":
        spec = catalogue.get(field_id)
        try:
            return float(spec.allowed_values.index(value.text))
        except ValueError:
            return None
    if value.kind in ("count", "length_mm"):
        return float(value.number)
    return None


@dataclass(frozen=True)
class FieldScreenRow:
    field_id: str
    c_index: float
    n_subjects: int


def univariate_field_screen(
    field_values: Mapping[str, Mapping[str, FieldValue]],
    records: Sequence[SurvivalRecord],
    catalogue: Catalogue | None = None,
) -> list[FieldScreenRow]:
    """Rank fields by how well their encoded value orders survival.

    ``field_values`` maps subject_id to that subject's final field
    values.  Subjects lacking a usable value for a field are excluded
    from that field's c-index; fields with no comparable pairs are
    skipped.
    """
    catalogue = catalogue or default_catalogue()
    by_subject = {r.subject_id: r for r in records}
    rows = []
    for spec in catalogue:
        scores: dict[str, float] = {}
        for subject_id, values in field_values.items():
            if subject_id not in by_subject:
                continue
            value = values.get(spec.field_id)
            if value is None:
                continue
            encoded = encode_field_value(value, spec.field_id, catalogue)
            if encoded is not None:
                scores[subject_id] = encoded
        usable = [by_subject[sid] for sid in scores]
        if len(usable) < 2:
            continue
        try:
            c = concordance_index(scores, usable)
        except NoComparablePairsError:
            continue
        rows.append(FieldScreenRow(field_id=spec.field_id, c_index=c, n_subjects=len(usable)))
    if not rows:
        raise NoComparablePairsError("no field produced a comparable pair")
    rows.sort(key=lambda row: (-row.c_index, row.field_id))
    return rows


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_outcomes(path: str | Path) -> list[SurvivalRecord]:
    """Read an outcomes CSV (subject_id, time_days, event with event in {0,1})."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "time_days", "event"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"outcomes file needs columns {sorted(required)}")
        for row in reader:
            records.append(
                SurvivalRecord(
                    subject_id=row["subject_id"],
                    time=float(row["time_days"]),
                    event=row["event"].strip() in ("1", "true", "True"),
                )
            )
    return records


def check_outcomes_cover(records: Sequence[SurvivalRecord], subject_ids: Iterable[str]) -> None:
    known = {r.subject_id for r in records}
    missing = [sid for sid in subject_ids if sid not in known]
    if missing:
        raise MissingOutcomesError(missing)


def write_km_csv(curve: KmCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "survival", "at_risk", "events"])
        for point in curve.points:
            writer.writerow([point.time, f"{point.survival:.6f}", point.at_risk, point.events])


def write_screen_csv(rows: Sequence[FieldScreenRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field_id", "c_index", "n_subjects"])
        for row in rows:
            writer.writerow([row.field_id, f"{row.c_index:.6f}", row.n_subjects])
