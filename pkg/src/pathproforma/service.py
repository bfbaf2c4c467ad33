"""HTTP facade over the pipeline for the review UI.

Uploads are processed asynchronously: POST returns immediately with a
report id, the client polls until the session completes, reviews each
field, optionally overrides values, and exports the proforma or the full
JSON.  Overrides never replace the stored model output - both are always
returned - and every mutation bumps a per-session version counter so
concurrent edits resolve to exactly one stored override.

State lives in memory with an append-only JSONL journal for restart
recovery; this is a single-clinic, desk-scale service by design.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .confidence import CalibrationModel
from .errors import TranscriptionEmptyError
from .pipeline import (
    FieldOutcome,
    PipelineConfig,
    StandardisedReport,
    build_backend,
    process_report,
    resolve_field_subset,
)
from .prompts import default_templates, load_templates
from .schema import (
    ConsistencyWarning,
    FieldValue,
    NormalisationFailure,
    default_catalogue,
    load_catalogue,
)

log = logging.getLogger(__name__)

STATUS_QUEUED = "queued"
STATUS_PROCESSING = "processing"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"

_TEXT_TYPES = ("text/plain", "application/octet-stream")
_IMAGE_SUFFIXES = {".png": "png", ".jpg": "jpeg", ".jpeg": "jpeg"}


@dataclass
class ServiceConfig:
    pipeline: PipelineConfig
    max_upload_bytes: int = 1_000_000
    auth_token: str | None = None
    cors_origin: str = "*"
    journal_path: str | None = None


def load_service_config(path: str | Path) -> ServiceConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    service = data.pop("service", {})
    pipeline = PipelineConfig(**data)
    return ServiceConfig(pipeline=pipeline, **service)


@dataclass
class Override:
    value: FieldValue
    note: str
    version: int


@dataclass
class Session:
    report_id: str
    status: str = STATUS_QUEUED
    error: str | None = None
    report: StandardisedReport | None = None
    overrides: dict[str, Override] = dataclass_field(default_factory=dict)
    version: int = 0
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)


class OverrideBody(BaseModel):
    value: str
    note: str = ""


class ReportStore:
    """In-memory sessions plus the append-only journal."""

    def __init__(self, journal_path: str | None = None):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_lock = threading.Lock()
        if self._journal_path and self._journal_path.exists():
            self._replay()

    def _journal(self, event: dict) -> None:
        if self._journal_path is None:
            return
        with self._journal_lock:
            with open(self._journal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self) -> None:
        catalogue = default_catalogue()
        for line in self._journal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            kind = event.get("event")
            report_id = event.get("report_id", "")
            if kind == "created":
                self._sessions[report_id] = Session(report_id=report_id)
                self._counter = max(self._counter, int(report_id.rsplit("-", 1)[-1] or 0))
            elif kind == "status" and report_id in self._sessions:
                session = self._sessions[report_id]
                session.status = event["status"]
                session.error = event.get("error")
            elif kind == "report" and report_id in self._sessions:
                session = self._sessions[report_id]
                session.report = _report_from_dict(event["report"], catalogue)
            elif kind == "override" and report_id in self._sessions:
                session = self._sessions[report_id]
                value = FieldValue.from_parts(event["value_kind"], event["value"])
                session.overrides[event["field_id"]] = Override(
                    value=value, note=event.get("note", ""), version=event["version"]
                )
                session.version = max(session.version, event["version"])
        # Jobs in flight when the process died cannot be resumed.
        for session in self._sessions.values():
            if session.status in (STATUS_QUEUED, STATUS_PROCESSING):
                session.status = STATUS_FAILED
                session.error = "interrupted by service restart"

    def create(self) -> Session:
        with self._lock:
            self._counter += 1
            report_id = f"report-{self._counter:04d}"
            session = Session(report_id=report_id)
            self._sessions[report_id] = session
        self._journal({"event": "created", "report_id": report_id})
        return session

    def get(self, report_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(report_id)

    def set_status(self, session: Session, status: str, error: str | None = None) -> None:
        session.status = status
        session.error = error
        event = {"event": "status", "report_id": session.report_id, "status": status}
        if error:
            event["error"] = error
        self._journal(event)

    def set_report(self, session: Session, report: StandardisedReport) -> None:
        session.report = report
        self._journal(
            {"event": "report", "report_id": session.report_id, "report": report.to_dict()}
        )

    def add_override(
        self, session: Session, field_id: str, value: FieldValue, note: str
    ) -> Override:
        with session.lock:
            session.version += 1
            override = Override(value=value, note=note, version=session.version)
            session.overrides[field_id] = override
        self._journal(
            {
                "event": "override",
                "report_id": session.report_id,
                "field_id": field_id,
                "value": value.canonical_text(),
                "value_kind": value.kind,
                "note": note,
                "version": override.version,
            }
        )
        return override


def _report_from_dict(data: dict, catalogue) -> StandardisedReport:
    entries = {}
    for field_id, entry in data.get("fields", {}).items():
        entries[field_id] = FieldOutcome(
            field_id=field_id,
            value=FieldValue.from_parts(entry["value_kind"], entry["value"]),
            provenance=entry["provenance"],
            e_confidence=entry["e_confidence"],
            v_correct=entry["v_correct"],
            v_confidence=entry["v_confidence"],
            v_correction=entry["v_correction"],
            v_pct_agree=entry["v_pct_agree"],
            raw_confidence=entry["raw_confidence"],
            calibrated_confidence=entry.get("calibrated_confidence"),
            calibration_passthrough=entry.get("calibration_passthrough"),
            degraded=entry.get("degraded", False),
            failed=entry.get("failed", False),
            extraction_tally=entry.get("extraction", {}).get("tally", {}),
            extraction_n_total=entry.get("extraction", {}).get("n_total", 0),
            extraction_n_unparseable=entry.get("extraction", {}).get("n_unparseable", 0),
            validation_majority_correctness=entry.get("validation", {}).get(
                "majority_correctness", False
            ),
            validation_n_total=entry.get("validation", {}).get("n_total", 0),
            validation_n_unparseable=entry.get("validation", {}).get("n_unparseable", 0),
            validation_correctness_tally=entry.get("validation", {}).get(
                "correctness_tally", {}
            ),
            validation_correction_tally=entry.get("validation", {}).get(
                "correction_tally", {}
            ),
        )
    warnings = [
        ConsistencyWarning(
            code=w["code"], message=w["message"], fields_involved=tuple(w["fields_involved"])
        )
        for w in data.get("warnings", [])
    ]
    return StandardisedReport(
        report_id=data["report_id"],
        source=data.get("source", "text_file"),
        backend_id=data.get("backend_id", "unknown"),
        config_hash=data.get("config_hash", ""),
        entries=entries,
        warnings=warnings,
        created_at=data.get("created_at"),
    )


# ---------------------------------------------------------------------------
# App assembly
# ---------------------------------------------------------------------------


def build_app(config: ServiceConfig) -> FastAPI:
    config.pipeline.validate()
    catalogue = (
        load_catalogue(config.pipeline.schema_path)
        if config.pipeline.schema_path
        else default_catalogue()
    )
    library = (
        load_templates(config.pipeline.prompts_path)
        if config.pipeline.prompts_path
        else default_templates()
    )
    library.check_covers(catalogue)
    calibration = (
        CalibrationModel.load(config.pipeline.calibration_path)
        if config.pipeline.calibration_path
        else None
    )
    backend = build_backend(config.pipeline, catalogue)
    field_ids = resolve_field_subset(catalogue, config.pipeline.fields)
    store = ReportStore(config.journal_path)
    workers = ThreadPoolExecutor(max_workers=2, thread_name_prefix="pipeline")

    log.warning(
        "Privacy notice: uploaded reports are sent to the configured language-model "
        "backend. Anonymise patient-identifying details before upload."
    )

    app = FastAPI(title="pathproforma review service")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[config.cors_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def _unauthorised(request: Request) -> JSONResponse | None:
        if config.auth_token is None:
            return None
        supplied = request.headers.get("authorization", "")
        if supplied == f"Bearer {config.auth_token}":
            return None
        return JSONResponse({"detail": "unauthorised"}, status_code=401)

    def _process(session: Session, payload: bytes, filename: str, is_image: bool) -> None:
        store.set_status(session, STATUS_PROCESSING)
        try:
            if is_image:
                image_format = _IMAGE_SUFFIXES[Path(filename).suffix.lower()]
                text = backend.transcribe(payload, image_format, image_id=filename)
                source = "transcribed_image"
            else:
                text = payload.decode("utf-8")
                source = "text_file"
            report = process_report(
                session.report_id,
                text,
                source,
                field_ids,
                backend,
                config.pipeline,
                catalogue,
                library,
                calibration,
            )
        except TranscriptionEmptyError:
            store.set_status(session, STATUS_FAILED, error="image unreadable: transcription empty")
            return
        except Exception as exc:  # a failed report must not kill the worker
            log.exception("processing failed for %s", session.report_id)
            store.set_status(session, STATUS_FAILED, error=str(exc))
            return
        store.set_report(session, report)
        store.set_status(session, STATUS_COMPLETE)

    # -- endpoints ------------------------------------------------------

    @app.post("/api/reports", status_code=202)
    async def submit_report(request: Request):
        denied = _unauthorised(request)
        if denied:
            return denied
        content_type = request.headers.get("content-type", "")
        filename = "upload.txt"
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = None
            for key in ("file", "report", "upload"):
                candidate = form.get(key)
                if candidate is not None and hasattr(candidate, "filename"):
                    upload = candidate
                    break
            if upload is None:
                return JSONResponse({"detail": "no file part in form"}, status_code=400)
            filename = upload.filename or filename
            payload = await upload.read()
        else:
            payload = await request.body()
        if not payload:
            return JSONResponse({"detail": "empty upload"}, status_code=400)
        if len(payload) > config.max_upload_bytes:
            return JSONResponse(
                {"detail": f"upload exceeds {config.max_upload_bytes} bytes"},
                status_code=413,
            )
        suffix = Path(filename).suffix.lower()
        is_image = suffix in _IMAGE_SUFFIXES
        if not is_image and suffix not in (".txt", ".text", ""):
            return JSONResponse(
                {"detail": f"unsupported media type {suffix}"}, status_code=415
            )
        if not is_image:
            try:
                payload.decode("utf-8")
            except UnicodeDecodeError:
                return JSONResponse(
                    {"detail": "text upload is not valid UTF-8"}, status_code=415
                )
        session = store.create()
        workers.submit(_process, session, payload, filename, is_image)
        return JSONResponse(
            {"report_id": session.report_id, "status": STATUS_QUEUED}, status_code=202
        )

    def _field_view(session: Session, field_id: str) -> dict:
        outcome = session.report.entries[field_id]
        spec = catalogue.get(field_id)
        override = session.overrides.get(field_id)
        return {
            "field_id": field_id,
            "display_name": spec.display_name,
            "value_kind_spec": spec.value_kind,
            "allowed_values": list(spec.allowed_values),
            "other_escape": spec.other_escape,
            "value": outcome.value.canonical_text(),
            "value_kind": outcome.value.kind,
            "provenance": outcome.provenance,
            "raw_confidence": outcome.raw_confidence,
            "calibrated_confidence": outcome.calibrated_confidence,
            "display_confidence": outcome.display_confidence(),
            "degraded": outcome.degraded,
            "failed": outcome.failed,
            "override": None
            if override is None
            else {
                "value": override.value.canonical_text(),
                "value_kind": override.value.kind,
                "note": override.note,
                "version": override.version,
                "provenance": "human_override",
            },
        }

    def _session_view(session: Session) -> dict:
        view = {
            "report_id": session.report_id,
            "status": session.status,
            "version": session.version,
        }
        if session.error:
            view["error"] = session.error
        if session.status == STATUS_COMPLETE and session.report is not None:
            ordered = [s.field_id for s in catalogue if s.field_id in session.report.entries]
            view["source"] = session.report.source
            view["backend_id"] = session.report.backend_id
            view["fields"] = {
                field_id: _field_view(session, field_id) for field_id in ordered
            }
            view["warnings"] = [
                {
                    "code": w.code,
                    "message": w.message,
                    "fields_involved": list(w.fields_involved),
                }
                for w in session.report.warnings
            ]
        return view

    @app.get("/api/reports/{report_id}")
    async def get_report(report_id: str, request: Request):
        denied = _unauthorised(request)
        if denied:
            return denied
        session = store.get(report_id)
        if session is None:
            return JSONResponse({"detail": "unknown report id"}, status_code=404)
        return JSONResponse(_session_view(session))

    @app.patch("/api/reports/{report_id}/fields/{field_id}")
    async def override_field(report_id: str, field_id: str, body: OverrideBody, request: Request):
        denied = _unauthorised(request)
        if denied:
            return denied
        session = store.get(report_id)
        if session is None:
            return JSONResponse({"detail": "unknown report id"}, status_code=404)
        if session.status != STATUS_COMPLETE or session.report is None:
            return JSONResponse(
                {"detail": f"session is {session.status}, not complete"}, status_code=409
            )
        if field_id not in session.report.entries:
            return JSONResponse({"detail": f"unknown field {field_id}"}, status_code=404)
        value = catalogue.normalise(field_id, body.value)
        if isinstance(value, NormalisationFailure):
            return JSONResponse(
                {"detail": f"value {body.value!r} fails normalisation ({value.reason})"},
                status_code=422,
            )
        store.add_override(session, field_id, value, body.note)
        return JSONResponse(_field_view(session, field_id))

    @app.get("/api/reports/{report_id}/export")
    async def export_report(report_id: str, request: Request, format: str = "json"):
        denied = _unauthorised(request)
        if denied:
            return denied
        session = store.get(report_id)
        if session is None:
            return JSONResponse({"detail": "unknown report id"}, status_code=404)
        if session.status != STATUS_COMPLETE or session.report is None:
            return JSONResponse(
                {"detail": f"session is {session.status}, not complete"}, status_code=409
            )
        if format == "proforma":
            values = session.report.final_values()
            confidences = {
                field_id: outcome.display_confidence()
                for field_id, outcome in session.report.entries.items()
                if not outcome.failed
            }
            for field_id, override in session.overrides.items():
                values[field_id] = override.value
            text = catalogue.render_proforma(
                values, confidences, overridden=set(session.overrides)
            )
            return PlainTextResponse(text)
        if format == "json":
            view = _session_view(session)
            view["exported_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
            return JSONResponse(view)
        return JSONResponse(
            {"detail": f"unsupported export format {format!r}"}, status_code=400
        )

    return app
