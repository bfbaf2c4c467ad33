"""Metrics for whether confidence predicts extraction correctness.

Each evaluated extraction carries a +1/-1 label (correct/incorrect).
The core question - do higher confidences go with correct extractions -
is answered per field by the rank-based area under the ROC curve, and
operationally by abstention curves: how accuracy over the accepted
extractions moves as low-confidence ones are rejected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, MissingLabelsError, SingleClassError


@dataclass(frozen=True)
class EvaluationLabel:
    report_id: str
    field_id: str
    label: int  # +1 correct, -1 incorrect
    truth_value: str = ""

    def __post_init__(self) -> None:
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")


@dataclass(frozen=True)
class AbstentionPoint:
    threshold: float
    rejected_fraction: float
    accepted_accuracy: float | None  # None when everything is rejected
    n_accepted: int


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via midranks.

    Equals the probability that a random correct extraction outscores a
    random incorrect one, with ties counting half.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    if not scores:
        raise EmptyInputError("no scores")
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC needs both +1 and -1 labels")

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # midrank shared by the tied block [i, j] (1-based ranks)
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum_pos = float(ranks[y > 0].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auroc_pair_oracle(scores: Sequence[float], labels: Sequence[int]) -> float:
    """O(n^2) pair-counting AUROC, kept as the independent cross-check."""
    positives = [s for s, y in zip(scores, labels) if y > 0]
    negatives = [s for s, y in zip(scores, labels) if y < 0]
    if not positives or not negatives:
        raise SingleClassError("AUROC needs both +1 and -1 labels")
    credit = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                credit += 1.0
            elif p == n:
                credit += 0.5
    return credit / (len(positives) * len(negatives))


def abstention_curve(
    scores: Sequence[float],
    labels: Sequence[int],
    thresholds: Sequence[float] | None = None,
) -> list[AbstentionPoint]:
    """Sweep rejection thresholds over the scored extractions.

    At each threshold the extractions scoring below it are rejected; the
    point records the rejected fraction and the accuracy over what
    remains.  The default grid is every distinct score plus 0 and 1.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    if not scores:
        raise EmptyInputError("no scores")
    if thresholds is None:
        thresholds = sorted(set(scores) | {0.0, 1.0})
    n = len(scores)
    points = []
    for t in thresholds:
        accepted = [y for s, y in zip(scores, labels) if s >= t]
        n_accepted = len(accepted)
        if n_accepted:
            accuracy = sum(1 for y in accepted if y > 0) / n_accepted
        else:
            accuracy = None
        points.append(
            AbstentionPoint(
                threshold=float(t),
                rejected_fraction=1.0 - n_accepted / n,
                accepted_accuracy=accuracy,
                n_accepted=n_accepted,
            )
        )
    return points


def calibration_metrics(
    probabilities: Sequence[float], labels: Sequence[int]
) -> tuple[float, float]:
    """Negative log-likelihood and Brier score of probabilistic confidence."""
    if len(probabilities) != len(labels):
        raise ValueError("probabilities and labels must have equal length")
    if not probabilities:
        raise EmptyInputError("no probabilities")
    nll = 0.0
    brier = 0.0
    for p, y in zip(probabilities, labels):
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability {p} outside (0, 1)")
        outcome = 1.0 if y > 0 else 0.0
        nll -= math.log(p if y > 0 else 1.0 - p)
        brier += (p - outcome) ** 2
    n = len(probabilities)
    return nll / n, brier / n


# ---------------------------------------------------------------------------
# Label files and per-field reporting
# ---------------------------------------------------------------------------


def load_labels(path: str | Path) -> list[EvaluationLabel]:
    """Read a labels CSV (report_id, field_id, label, truth_value)."""
    labels = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"report_id", "field_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"labels file needs columns {sorted(required)}")
        for row in reader:
            labels.append(
                EvaluationLabel(
                    report_id=row["report_id"],
                    field_id=row["field_id"],
                    label=int(row["label"]),
                    truth_value=row.get("truth_value", "") or "",
                )
            )
    return labels


@dataclass(frozen=True)
class FieldMetrics:
    field_id: str
    n: int
    accuracy: float
    auroc: float | None  # None when only one class is present
    abstention: list[AbstentionPoint]


@dataclass(frozen=True)
class EvaluationReport:
    per_field: list[FieldMetrics]
    pooled: FieldMetrics  # all fields' pairs concatenated
    macro_mean_accuracy: float  # mean of the per-field accuracies


def per_field_report(
    scored: dict[tuple[str, str], float],
    labels: Iterable[EvaluationLabel],
) -> EvaluationReport:
    """Join confidences with labels and compute the metrics table.

    ``scored`` maps (report_id, field_id) to the confidence the run
    assigned.  Every scored pair must be labelled; uncovered pairs are
    an error because silently dropping them would bias the table.
    """
    by_pair = {(lab.report_id, lab.field_id): lab for lab in labels}
    missing = [pair for pair in scored if pair not in by_pair]
    if missing:
        raise MissingLabelsError(
            f"labels missing for {len(missing)} pairs, e.g. {sorted(missing)[:5]}"
        )
    field_ids = sorted({field_id for _, field_id in scored})
    per_field = []
    pooled_scores: list[float] = []
    pooled_labels: list[int] = []
    for field_id in field_ids:
        pairs = [
            (score, by_pair[pair].label)
            for pair, score in sorted(scored.items())
            if pair[1] == field_id
        ]
        scores = [s for s, _ in pairs]
        labs = [y for _, y in pairs]
        pooled_scores.extend(scores)
        pooled_labels.extend(labs)
        try:
            area = auroc(scores, labs)
        except SingleClassError:
            area = None
        per_field.append(
            FieldMetrics(
                field_id=field_id,
                n=len(pairs),
                accuracy=sum(1 for y in labs if y > 0) / len(labs),
                auroc=area,
                abstention=abstention_curve(scores, labs),
            )
        )
    try:
        pooled_auroc = auroc(pooled_scores, pooled_labels)
    except SingleClassError:
        pooled_auroc = None
    pooled = FieldMetrics(
        field_id="all_fields_pooled",
        n=len(pooled_scores),
        accuracy=sum(1 for y in pooled_labels if y > 0) / len(pooled_labels),
        auroc=pooled_auroc,
        abstention=abstention_curve(pooled_scores, pooled_labels),
    )
    macro = sum(m.accuracy for m in per_field) / len(per_field)
    return EvaluationReport(per_field=per_field, pooled=pooled, macro_mean_accuracy=macro)


def write_metrics_csv(report: EvaluationReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field_id", "n", "accuracy", "auroc"])
        for m in report.per_field:
            writer.writerow(
                [m.field_id, m.n, f"{m.accuracy:.6f}", "" if m.auroc is None else f"{m.auroc:.6f}"]
            )
        p = report.pooled
        writer.writerow(
            [p.field_id, p.n, f"{p.accuracy:.6f}", "" if p.auroc is None else f"{p.auroc:.6f}"]
        )
        writer.writerow(["macro_mean_accuracy", len(report.per_field), f"{report.macro_mean_accuracy:.6f}", ""])


def write_abstention_csv(points: Iterable[AbstentionPoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "rejected_fraction", "accepted_accuracy", "n_accepted"])
        for point in points:
            writer.writerow(
                [
                    f"{point.threshold:.6f}",
                    f"{point.rejected_fraction:.6f}",
                    "" if point.accepted_accuracy is None else f"{point.accepted_accuracy:.6f}",
                    point.n_accepted,
                ]
            )
