"""End-to-end pipeline: ingest reports, extract and validate every field,
fuse confidences, and persist run artifacts.

A run directory contains one JSON document and one plain-text proforma
per report plus a manifest.  Failures are contained: an unreadable image
excludes that report, a dead field never aborts its report, and only a
rejected credential (or an unwritable output directory) stops the run.
Runs against the mock backend are byte-reproducible for a fixed seed
when canonical output is on (timestamps and latencies are then omitted).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import confidence as confidence_mod
from . import evaluation as evaluation_mod
from . import survival as survival_mod
from .backends import LiveBackend, LmmBackend, MockBackend, MockScript
from .confidence import CalibrationModel, fit_calibration_model
from .errors import (
    NoUsableFieldsError,
    TranscriptionEmptyError,
    TransportError,
    UnsupportedFormatError,
)
from .extraction import aggregate_extractions, sample_extractions
from .prompts import TemplateLibrary, default_templates, load_templates
from .schema import (
    Catalogue,
    ConsistencyWarning,
    FieldValue,
    default_catalogue,
    load_catalogue,
)
from .validation import aggregate_validations, sample_validations

log = logging.getLogger(__name__)

TEXT_SUFFIXES = {".txt", ".text"}
IMAGE_SUFFIXES = {".png": "png", ".jpg": "jpeg", ".jpeg": "jpeg"}


@dataclass
class PipelineConfig:
    backend: str = "mock"  # "live" | "mock"
    base_url: str = "https://api.openai.com"
    model: str = "gpt-4-turbo"
    script_path: str | None = None
    n_extractor: int = 20
    n_validator: int = 10
    temperature: float = 1.0
    max_tokens: int = 300
    fields: list[str] | None = None  # None = whole catalogue
    schema_path: str | None = None
    prompts_path: str | None = None
    calibration_path: str | None = None
    concurrency: int = 4
    seed: int | None = None
    timeout_s: float = 60.0
    retry_attempts: int = 4
    retry_base_delay_s: float = 1.0
    canonical_output: bool = False

    def validate(self) -> None:
        if self.backend not in ("live", "mock"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.n_extractor < 2 or self.n_extractor % 2:
            raise ValueError("n_extractor must be even and >= 2")
        if self.n_validator < 1:
            raise ValueError("n_validator must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.backend == "mock" and not self.script_path:
            raise ValueError("mock backend needs script_path")

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**data)

    def hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return "sha256:" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def build_backend(config: PipelineConfig, catalogue: Catalogue) -> LmmBackend:
    if config.backend == "mock":
        script = MockScript.load(config.script_path)
        return MockBackend(script, catalogue=catalogue, seed=config.seed)
    return LiveBackend(
        base_url=config.base_url,
        model=config.model,
        timeout_s=config.timeout_s,
        retry_attempts=config.retry_attempts,
        retry_base_delay_s=config.retry_base_delay_s,
    )


# ---------------------------------------------------------------------------
# Per-report processing
# ---------------------------------------------------------------------------


@dataclass
class FieldOutcome:
    field_id: str
    value: FieldValue
    provenance: str
    e_confidence: float
    v_correct: float
    v_confidence: float
    v_correction: float
    v_pct_agree: float
    raw_confidence: float
    calibrated_confidence: float | None
    calibration_passthrough: bool | None
    degraded: bool
    failed: bool
    extraction_tally: dict[str, int]
    extraction_n_total: int
    extraction_n_unparseable: int
    validation_majority_correctness: bool
    validation_n_total: int
    validation_n_unparseable: int
    validation_correctness_tally: dict[str, int]
    validation_correction_tally: dict[str, int]

    def display_confidence(self) -> float:
        if self.calibrated_confidence is not None:
            return self.calibrated_confidence
        return self.raw_confidence


@dataclass
class StandardisedReport:
    report_id: str
    source: str  # "text_file" | "transcribed_image"
    backend_id: str
    config_hash: str
    entries: dict[str, FieldOutcome]
    warnings: list[ConsistencyWarning]
    created_at: str | None = None

    def final_values(self) -> dict[str, FieldValue]:
        return {field_id: outcome.value for field_id, outcome in self.entries.items()}

    def to_dict(self) -> dict:
        data = {
            "report_id": self.report_id,
            "source": self.source,
            "backend_id": self.backend_id,
            "config_hash": self.config_hash,
            "fields": {
                field_id: {
                    "value": outcome.value.canonical_text(),
                    "value_kind": outcome.value.kind,
                    "provenance": outcome.provenance,
                    "e_confidence": outcome.e_confidence,
                    "v_correct": outcome.v_correct,
                    "v_confidence": outcome.v_confidence,
                    "v_correction": outcome.v_correction,
                    "v_pct_agree": outcome.v_pct_agree,
                    "raw_confidence": outcome.raw_confidence,
                    "calibrated_confidence": outcome.calibrated_confidence,
                    "calibration_passthrough": outcome.calibration_passthrough,
                    "degraded": outcome.degraded,
                    "failed": outcome.failed,
                    "extraction": {
                        "tally": outcome.extraction_tally,
                        "n_total": outcome.extraction_n_total,
                        "n_unparseable": outcome.extraction_n_unparseable,
                    },
                    "validation": {
                        "majority_correctness": outcome.validation_majority_correctness,
                        "n_total": outcome.validation_n_total,
                        "n_unparseable": outcome.validation_n_unparseable,
                        "correctness_tally": outcome.validation_correctness_tally,
                        "correction_tally": outcome.validation_correction_tally,
                    },
                }
                for field_id, outcome in self.entries.items()
            },
            "warnings": [
                {
                    "code": w.code,
                    "message": w.message,
                    "fields_involved": list(w.fields_involved),
                }
                for w in self.warnings
            ],
        }
        if self.created_at is not None:
            data["created_at"] = self.created_at
        return data


def _failed_field_outcome(field_id: str) -> FieldOutcome:
    return FieldOutcome(
        field_id=field_id,
        value=FieldValue.not_available(),
        provenance=confidence_mod.PROVENANCE_EXTRACTOR,
        e_confidence=0.0,
        v_correct=0.0,
        v_confidence=0.0,
        v_correction=0.0,
        v_pct_agree=0.0,
        raw_confidence=0.0,
        calibrated_confidence=None,
        calibration_passthrough=None,
        degraded=True,
        failed=True,
        extraction_tally={},
        extraction_n_total=0,
        extraction_n_unparseable=0,
        validation_majority_correctness=False,
        validation_n_total=0,
        validation_n_unparseable=0,
        validation_correctness_tally={},
        validation_correction_tally={},
    )


def process_field(
    report_id: str,
    report_text: str,
    field_id: str,
    backend: LmmBackend,
    config: PipelineConfig,
    catalogue: Catalogue,
    library: TemplateLibrary,
    calibration: CalibrationModel | None,
) -> FieldOutcome:
    """Run extraction then validation for one field of one report."""
    samples, extraction_degraded = sample_extractions(
        report_id,
        report_text,
        field_id,
        backend,
        n_extractor=config.n_extractor,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        library=library,
        catalogue=catalogue,
    )
    if not samples:
        return _failed_field_outcome(field_id)
    extraction = aggregate_extractions(
        samples, field_id, catalogue=catalogue, degraded=extraction_degraded
    )
    validation_samples, validation_degraded = sample_validations(
        report_id,
        report_text,
        field_id,
        extraction.value,
        backend,
        n_validator=config.n_validator,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        library=library,
        catalogue=catalogue,
    )
    if not validation_samples:
        # Total validation loss: keep the extractor value, zero out the
        # validator factors, and let the low confidence speak.
        value = extraction.value
        provenance = confidence_mod.PROVENANCE_EXTRACTOR
        raw = extraction.e_confidence / 5.0
        factors = dict(
            v_correct=0.0, v_confidence=0.0, v_correction=0.0, v_pct_agree=0.0
        )
        degraded = True
        validation_summary = dict(
            majority_correctness=False,
            n_total=0,
            n_unparseable=0,
            correctness_tally={},
            correction_tally={},
        )
    else:
        validation = aggregate_validations(
            validation_samples,
            extraction.value,
            field_id,
            degraded=validation_degraded,
        )
        value, provenance = confidence_mod.final_value(extraction, validation)
        fused = confidence_mod.fuse(extraction, validation)
        raw = fused.raw_c
        factors = dict(
            v_correct=validation.v_correct,
            v_confidence=validation.v_confidence,
            v_correction=validation.v_correction,
            v_pct_agree=validation.v_pct_agree,
        )
        degraded = extraction.degraded or validation.degraded
        validation_summary = dict(
            majority_correctness=validation.majority_correctness,
            n_total=validation.n_total,
            n_unparseable=validation.n_unparseable,
            correctness_tally=validation.correctness_tally,
            correction_tally=validation.correction_tally,
        )
    calibrated: float | None = None
    passthrough: bool | None = None
    if calibration is not None:
        calibrated, passthrough = calibration.apply(field_id, raw)
        if passthrough:
            calibrated = None
    return FieldOutcome(
        field_id=field_id,
        value=value,
        provenance=provenance,
        e_confidence=extraction.e_confidence,
        raw_confidence=raw,
        calibrated_confidence=calibrated,
        calibration_passthrough=passthrough,
        degraded=degraded,
        failed=False,
        extraction_tally=extraction.tally,
        extraction_n_total=extraction.n_total,
        extraction_n_unparseable=extraction.n_unparseable,
        validation_majority_correctness=validation_summary["majority_correctness"],
        validation_n_total=validation_summary["n_total"],
        validation_n_unparseable=validation_summary["n_unparseable"],
        validation_correctness_tally=validation_summary["correctness_tally"],
        validation_correction_tally=validation_summary["correction_tally"],
        **factors,
    )


def process_report(
    report_id: str,
    report_text: str,
    source: str,
    field_ids: Sequence[str],
    backend: LmmBackend,
    config: PipelineConfig,
    catalogue: Catalogue,
    library: TemplateLibrary,
    calibration: CalibrationModel | None,
) -> StandardisedReport:
    entries: dict[str, FieldOutcome] = {}
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        futures = {
            field_id: pool.submit(
                process_field,
                report_id,
                report_text,
                field_id,
                backend,
                config,
                catalogue,
                library,
                calibration,
            )
            for field_id in field_ids
        }
        for field_id, future in futures.items():
            try:
                entries[field_id] = future.result()
            except TransportError:
                entries[field_id] = _failed_field_outcome(field_id)
    warnings = catalogue.cross_check(
        {field_id: outcome.value for field_id, outcome in entries.items()}
    )
    return StandardisedReport(
        report_id=report_id,
        source=source,
        backend_id=getattr(backend, "backend_id", "unknown"),
        config_hash=config.hash(),
        entries=entries,
        warnings=warnings,
        created_at=None if config.canonical_output else _now_iso(),
    )


def _now_iso() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------
# Run driver
# ---------------------------------------------------------------------------


def resolve_field_subset(
    catalogue: Catalogue, tokens: Iterable[str] | None
) -> list[str]:
    if not tokens:
        return catalogue.field_ids()
    resolved = [catalogue.resolve_field_id(token) for token in tokens]
    # Preserve catalogue order, drop duplicates.
    wanted = set(resolved)
    return [fid for fid in catalogue.field_ids() if fid in wanted]


def _read_input(path: Path, backend: LmmBackend) -> tuple[str, str]:
    """Return (report_text, source) for one input file."""
    suffix = path.suffix.lower()
    if suffix in TEXT_SUFFIXES:
        return path.read_text(encoding="utf-8"), "text_file"
    if suffix in IMAGE_SUFFIXES:
        text = backend.transcribe(
            path.read_bytes(), IMAGE_SUFFIXES[suffix], image_id=path.name
        )
        return text, "transcribed_image"
    raise UnsupportedFormatError(f"unsupported input type: {path.name}")


def run_extraction(
    input_paths: Sequence[str | Path],
    config: PipelineConfig,
    out_dir: str | Path,
) -> Path:
    """Run the full two-stage pipeline over a batch of reports.

    Writes one ``<report_id>.json`` and ``<report_id>.proforma.txt`` per
    report plus ``manifest.json``, and returns the run directory.
    """
    config.validate()
    catalogue = (
        load_catalogue(config.schema_path) if config.schema_path else default_catalogue()
    )
    library = (
        load_templates(config.prompts_path) if config.prompts_path else default_templates()
    )
    library.check_covers(catalogue)
    calibration = (
        CalibrationModel.load(config.calibration_path) if config.calibration_path else None
    )
    backend = build_backend(config, catalogue)
    field_ids = resolve_field_subset(catalogue, config.fields)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    paths = sorted(Path(p) for p in input_paths)
    seen_ids: set[str] = set()
    manifest_reports: dict[str, dict] = {}
    totals = {"fields_ok": 0, "fields_failed": 0}
    for path in paths:
        report_id = path.stem
        if report_id in seen_ids:
            raise ValueError(f"duplicate report id {report_id!r}")
        seen_ids.add(report_id)
        try:
            report_text, source = _read_input(path, backend)
        except TranscriptionEmptyError:
            log.warning("excluding unreadable image %s", path.name)
            manifest_reports[report_id] = {
                "status": "excluded",
                "reason": "transcription_empty",
            }
            continue
        except (UnsupportedFormatError, OSError, UnicodeDecodeError) as exc:
            manifest_reports[report_id] = {"status": "failed", "reason": str(exc)}
            continue
        if not report_text.strip():
            manifest_reports[report_id] = {"status": "failed", "reason": "empty_report"}
            continue
        report = process_report(
            report_id,
            report_text,
            source,
            field_ids,
            backend,
            config,
            catalogue,
            library,
            calibration,
        )
        n_failed = sum(1 for o in report.entries.values() if o.failed)
        n_ok = len(report.entries) - n_failed
        totals["fields_ok"] += n_ok
        totals["fields_failed"] += n_failed
        manifest_reports[report_id] = {
            "status": "complete",
            "n_fields_ok": n_ok,
            "n_fields_failed": n_failed,
        }
        _write_json(out / f"{report_id}.json", report.to_dict())
        proforma = catalogue.render_proforma(
            report.final_values(),
            {
                field_id: outcome.display_confidence()
                for field_id, outcome in report.entries.items()
                if not outcome.failed
            },
        )
        (out / f"{report_id}.proforma.txt").write_text(proforma, encoding="utf-8")

    manifest = {
        "config_hash": config.hash(),
        "config": dataclasses.asdict(config),
        "field_ids": field_ids,
        "n_inputs": len(paths),
        "reports": manifest_reports,
        "totals": totals,
    }
    if not config.canonical_output:
        manifest["created_at"] = _now_iso()
    _write_json(out / "manifest.json", manifest)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Reading a run back
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadedField:
    value: FieldValue
    raw_confidence: float
    calibrated_confidence: float | None
    failed: bool


@dataclass(frozen=True)
class LoadedReport:
    report_id: str
    fields: dict[str, LoadedField]


def load_run(run_dir: str | Path) -> list[LoadedReport]:
    run = Path(run_dir)
    reports = []
    for path in sorted(run.glob("*.json")):
        if path.name == "manifest.json":
            continue
        data = json.loads(path.read_text(encoding="utf-8"))
        fields = {}
        for field_id, entry in data.get("fields", {}).items():
            fields[field_id] = LoadedField(
                value=FieldValue.from_parts(entry["value_kind"], entry["value"]),
                raw_confidence=entry["raw_confidence"],
                calibrated_confidence=entry.get("calibrated_confidence"),
                failed=entry.get("failed", False),
            )
        reports.append(LoadedReport(report_id=data["report_id"], fields=fields))
    if not reports:
        raise FileNotFoundError(f"no report JSONs found in {run}")
    return reports


# ---------------------------------------------------------------------------
# Calibration / evaluation / survival drivers
# ---------------------------------------------------------------------------


def run_calibration(
    run_dir: str | Path, labels_path: str | Path, out_path: str | Path
) -> tuple[CalibrationModel, dict[str, str]]:
    """Fit per-field sigmoid calibration from a labelled run."""
    reports = load_run(run_dir)
    labels = evaluation_mod.load_labels(labels_path)
    by_pair = {(lab.report_id, lab.field_id): lab.label for lab in labels}
    pairs_by_field: dict[str, list[tuple[float, int]]] = {}
    for report in reports:
        for field_id, loaded in report.fields.items():
            if loaded.failed:
                continue
            label = by_pair.get((report.report_id, field_id))
            if label is None:
                continue
            pairs_by_field.setdefault(field_id, []).append(
                (loaded.raw_confidence, label)
            )
    model, skipped = fit_calibration_model(pairs_by_field)
    if not model.entries:
        raise NoUsableFieldsError(
            "no field has >= 10 labelled pairs with both classes"
        )
    for field_id, reason in skipped.items():
        log.warning("calibration skipped %s: %s", field_id, reason)
    model.save(out_path)
    return model, skipped


def run_evaluation(
    run_dir: str | Path,
    labels_path: str | Path,
    out_dir: str | Path,
    calibration_path: str | Path | None = None,
    use_calibrated: bool = False,
) -> evaluation_mod.EvaluationReport:
    """Score confidence against correctness labels and write the tables."""
    reports = load_run(run_dir)
    labels = evaluation_mod.load_labels(labels_path)
    calibration = CalibrationModel.load(calibration_path) if calibration_path else None

    scored: dict[tuple[str, str], float] = {}
    raw_scores: dict[tuple[str, str], float] = {}
    for report in reports:
        for field_id, loaded in report.fields.items():
            if loaded.failed:
                continue
            raw_scores[(report.report_id, field_id)] = loaded.raw_confidence
            score = loaded.raw_confidence
            if use_calibrated:
                if loaded.calibrated_confidence is not None:
                    score = loaded.calibrated_confidence
                elif calibration is not None:
                    score, _ = calibration.apply(field_id, score)
            scored[(report.report_id, field_id)] = score

    report_table = evaluation_mod.per_field_report(scored, labels)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation_mod.write_metrics_csv(report_table, out / "metrics.csv")
    for metrics in report_table.per_field:
        evaluation_mod.write_abstention_csv(
            metrics.abstention, out / f"abstention_{metrics.field_id}.csv"
        )
    evaluation_mod.write_abstention_csv(
        report_table.pooled.abstention, out / "abstention_pooled.csv"
    )

    if calibration is not None:
        by_pair = {(lab.report_id, lab.field_id): lab.label for lab in labels}
        rows = []
        for metrics in report_table.per_field:
            pairs = [
                (pair, raw)
                for pair, raw in sorted(raw_scores.items())
                if pair[1] == metrics.field_id
            ]
            labs = [by_pair[pair] for pair, _ in pairs]
            raw_probs = [min(1 - 1e-6, max(1e-6, raw)) for _, raw in pairs]
            calibrated_probs = [
                min(1 - 1e-6, max(1e-6, calibration.apply(metrics.field_id, raw)[0]))
                for _, raw in pairs
            ]
            nll_raw, brier_raw = evaluation_mod.calibration_metrics(raw_probs, labs)
            nll_cal, brier_cal = evaluation_mod.calibration_metrics(calibrated_probs, labs)
            rows.append(
                (metrics.field_id, len(pairs), nll_raw, brier_raw, nll_cal, brier_cal)
            )
        with open(out / "calibration_metrics.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["field_id", "n", "nll_raw", "brier_raw", "nll_calibrated", "brier_calibrated"]
            )
            for row in rows:
                writer.writerow(
                    [row[0], row[1]] + [f"{v:.6f}" for v in row[2:]]
                )
    return report_table


def run_survival(
    run_dir: str | Path,
    outcomes_path: str | Path,
    out_dir: str | Path,
    scores_path: str | Path | None = None,
) -> dict:
    """Univariate field screen plus median-split survival stratification."""
    reports = load_run(run_dir)
    records = survival_mod.load_outcomes(outcomes_path)
    subject_ids = [r.report_id for r in reports]
    survival_mod.check_outcomes_cover(records, subject_ids)
    by_subject = {r.subject_id: r for r in records}
    cohort = [by_subject[sid] for sid in subject_ids]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    field_values = {
        report.report_id: {
            field_id: loaded.value
            for field_id, loaded in report.fields.items()
            if not loaded.failed
        }
        for report in reports
    }
    screen = survival_mod.univariate_field_screen(field_values, cohort)
    survival_mod.write_screen_csv(screen, out / "field_screen.csv")
    summary: dict = {
        "n_subjects": len(cohort),
        "n_events": sum(1 for r in cohort if r.event),
        "screen_top_field": screen[0].field_id if screen else None,
    }

    if scores_path is not None:
        scores: dict[str, float] = {}
        with open(scores_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"subject_id", "score"}.issubset(
                reader.fieldnames
            ):
                raise ValueError("scores file needs columns subject_id,score")
            for row in reader:
                scores[row["subject_id"]] = float(row["score"])
        missing = sorted(sid for sid in subject_ids if sid not in scores)
        if missing:
            raise ValueError(f"scores file is missing subjects: {', '.join(missing)}")
        groups = survival_mod.stratify_median({sid: scores[sid] for sid in subject_ids})
        high = [by_subject[sid] for sid in groups.high_risk]
        low = [by_subject[sid] for sid in groups.low_risk]
        if high:
            survival_mod.write_km_csv(survival_mod.kaplan_meier(high), out / "km_high_risk.csv")
        survival_mod.write_km_csv(survival_mod.kaplan_meier(low), out / "km_low_risk.csv")
        if high and low:
            statistic, p_value = survival_mod.log_rank(high, low)
            summary["log_rank_chi_square"] = statistic
            summary["log_rank_p_value"] = p_value
        summary["n_high_risk"] = len(high)
        summary["n_low_risk"] = len(low)
        summary["median_split_degenerate"] = groups.degenerate

    _write_json(out / "survival_summary.json", summary)
    return summary
