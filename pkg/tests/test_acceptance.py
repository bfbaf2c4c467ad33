"""Acceptance gate: every primary criterion at its stated tolerance.

Each test records a PASS/FAIL line that the terminal summary prints at
the end of the session (see conftest.pytest_terminal_summary).
"""

import json
import math
import random
import socket
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner

from test_extraction import brute_force_mode
from test_service import REPORT_TEXT, _script_file
from test_survival import cindex_oracle

from pathproforma.cli import main as cli_main
from pathproforma.confidence import fit_platt, fuse
from pathproforma.errors import NoComparablePairsError
from pathproforma.evaluation import (
    abstention_curve,
    auroc,
    auroc_pair_oracle,
    load_labels,
    per_field_report,
)
from pathproforma.extraction import (
    ExtractionSample,
    ParseFailure,
    aggregate_extractions,
)
from pathproforma.extraction import ExtractionResult
from pathproforma.pipeline import load_run
from pathproforma.schema import NOT_AVAILABLE, FieldValue, default_catalogue
from pathproforma.survival import (
    SurvivalRecord,
    concordance_index,
    kaplan_meier,
    log_rank,
    stratify_median,
    univariate_field_screen,
)
from pathproforma.validation import ValidationResult


class TestAggregationOracle:
    def test_thousand_random_tallies(self, acceptance):
        with acceptance.record(
            "Aggregation oracle: 1,000 seeded tallies match brute-force mode exactly (< 5 s)"
        ):
            started = time.monotonic()
            rng = random.Random(424242)
            vocab = ["pT1", "pT2", "pT3", "pT4a", "pT4b", "pTis"]
            for _ in range(1000):
                n = rng.randint(1, 40)
                parsed = []
                renderings = []
                for _ in range(n):
                    roll = rng.random()
                    if roll < 0.12:
                        parsed.append(ParseFailure("no_json"))
                        renderings.append(None)
                    elif roll < 0.3:
                        parsed.append(FieldValue.not_available())
                        renderings.append(NOT_AVAILABLE)
                    else:
                        # Tiny sub-vocabularies force frequent ties.
                        token = rng.choice(vocab[: rng.randint(2, len(vocab))])
                        parsed.append(FieldValue.canonical(token))
                        renderings.append(token)
                samples = [
                    ExtractionSample(raw_text="", parsed=p, prompt_variant="a")
                    for p in parsed
                ]
                result = aggregate_extractions(samples, "local_invasion")
                expected_value, expected_confidence = brute_force_mode(renderings)
                assert result.value.canonical_text() == expected_value
                assert result.e_confidence == expected_confidence
            assert time.monotonic() - started < 5.0


def _result_pair(factors):
    extraction = ExtractionResult(
        field_id="f",
        value=FieldValue.not_available(),
        e_confidence=factors[0],
        tally={},
        n_total=20,
        n_unparseable=0,
    )
    validation = ValidationResult(
        field_id="f",
        majority_correctness=True,
        v_correct=factors[1],
        v_confidence=factors[2],
        majority_correction=FieldValue.not_available(),
        v_correction=factors[3],
        v_pct_agree=factors[4],
        n_total=10,
        n_unparseable=0,
    )
    return extraction, validation


class TestFusionExactness:
    def test_mean_and_monotonicity(self, acceptance):
        with acceptance.record(
            "Fusion exactness: mean of five factors within 1e-12 and monotone "
            "on 10,000 perturbations"
        ):
            rng = random.Random(99)
            for _ in range(10_000):
                factors = [rng.random() for _ in range(5)]
                fused = fuse(*_result_pair(factors))
                assert abs(fused.raw_c - sum(factors) / 5.0) <= 1e-12
            for _ in range(10_000):
                factors = [rng.random() for _ in range(5)]
                index = rng.randrange(5)
                bumped = list(factors)
                bumped[index] = min(1.0, bumped[index] + rng.random() * (1.0 - bumped[index]))
                assert (
                    fuse(*_result_pair(bumped)).raw_c
                    >= fuse(*_result_pair(factors)).raw_c
                )


class TestAurocOracle:
    def test_matches_pair_counting(self, acceptance):
        with acceptance.record(
            "AUROC oracle: rank-based equals pair-counting within 1e-12 on 200 instances"
        ):
            rng = random.Random(7777)
            cases = 0
            while cases < 198:
                n = rng.randint(2, 200)
                scores = [round(rng.random(), rng.choice([1, 2, 3])) for _ in range(n)]
                labels = [rng.choice([1, -1]) for _ in range(n)]
                if len(set(labels)) < 2:
                    continue
                assert abs(auroc(scores, labels) - auroc_pair_oracle(scores, labels)) <= 1e-12
                cases += 1
            # All-ties and perfect-separation corner cases.
            assert abs(auroc([0.5] * 10, [1, -1] * 5) - 0.5) <= 1e-12
            separated_scores = [0.9] * 5 + [0.1] * 5
            separated_labels = [1] * 5 + [-1] * 5
            assert abs(auroc(separated_scores, separated_labels) - 1.0) <= 1e-12


class TestPlattRecovery:
    def test_recovers_synthetic_sigmoid(self, acceptance):
        with acceptance.record(
            "Platt recovery: fitted curve within 0.05 of generator on 2,000 pairs, "
            "nll_after < nll_before (< 5 s)"
        ):
            started = time.monotonic()
            rng = random.Random(20231)
            pairs = []
            for _ in range(2000):
                c = rng.random()
                p = 1.0 / (1.0 + math.exp(-8.0 * c + 4.0))
                pairs.append((c, 1 if rng.random() < p else -1))
            fit = fit_platt("synthetic", pairs)
            for grid in [i / 10 for i in range(1, 10)]:
                truth = 1.0 / (1.0 + math.exp(-8.0 * grid + 4.0))
                predicted = 1.0 / (1.0 + math.exp(fit.a * grid + fit.b))
                assert abs(predicted - truth) <= 0.05
            assert fit.nll_after < fit.nll_before
            assert time.monotonic() - started < 5.0


class TestEndToEndMockPipeline:
    def test_accuracy_and_runtime(self, acceptance, mock_run):
        with acceptance.record(
            "End-to-end mock pipeline: 50x11 fields, >= 95% of finals match truth (< 60 s)"
        ):
            assert mock_run.stats["n_total"] == 550
            assert mock_run.stats["accuracy"] >= 0.95
            assert mock_run.runtime_s < 60.0

    def test_byte_reproducible_via_cli(self, acceptance, mock_run, tmp_path):
        with acceptance.record(
            "End-to-end mock pipeline: rerun with --canonical-output is byte-identical"
        ):
            out_dir = tmp_path / "cli_rerun"
            runner = CliRunner()
            args = ["extract"]
            for path in mock_run.input_paths:
                args += ["--input", str(path)]
            args += [
                "--backend", "mock",
                "--script", str(mock_run.script_path),
                "--seed", str(mock_run.config.seed),
                "--out", str(out_dir),
                "--canonical-output",
            ]
            result = runner.invoke(cli_main, args)
            assert result.exit_code == 0, result.output
            original_files = sorted(p.name for p in mock_run.run_dir.iterdir())
            rerun_files = sorted(p.name for p in out_dir.iterdir())
            assert original_files == rerun_files
            for name in original_files:
                assert (mock_run.run_dir / name).read_bytes() == (
                    out_dir / name
                ).read_bytes(), name


def _scored_pairs(mock_run):
    reports = load_run(mock_run.run_dir)
    scored = {}
    for report in reports:
        for field_id, loaded in report.fields.items():
            if not loaded.failed:
                scored[(report.report_id, field_id)] = loaded.raw_confidence
    return scored


class TestConfidencePredictiveness:
    def test_auroc_thresholds(self, acceptance, mock_run):
        with acceptance.record(
            "Confidence predictiveness: pooled AUROC >= 0.75 and every field > 0.5"
        ):
            labels = load_labels(mock_run.labels_path)
            table = per_field_report(_scored_pairs(mock_run), labels)
            assert table.pooled.auroc is not None
            assert table.pooled.auroc >= 0.75
            assert len(table.per_field) == 11
            for metrics in table.per_field:
                assert metrics.auroc is not None, f"{metrics.field_id}: single class"
                assert metrics.auroc > 0.5, f"{metrics.field_id}: {metrics.auroc}"


class TestAbstentionTrend:
    def test_rejection_improves_accuracy(self, acceptance, mock_run):
        with acceptance.record(
            "Abstention trend: accuracy at ~30% rejection >= accuracy at zero rejection; "
            "accepted counts monotone"
        ):
            labels = load_labels(mock_run.labels_path)
            by_pair = {(l.report_id, l.field_id): l.label for l in labels}
            scored = _scored_pairs(mock_run)
            scores = [scored[pair] for pair in sorted(scored)]
            labs = [by_pair[pair] for pair in sorted(scored)]
            points = abstention_curve(scores, labs)
            accepted_counts = [p.n_accepted for p in points]
            assert accepted_counts == sorted(accepted_counts, reverse=True)
            baseline = next(p for p in points if p.threshold == 0.0)
            nearest = min(points, key=lambda p: abs(p.rejected_fraction - 0.30))
            assert nearest.accepted_accuracy is not None
            assert nearest.accepted_accuracy >= baseline.accepted_accuracy


class TestSurvivalOracles:
    def test_all_survival_oracles(self, acceptance):
        with acceptance.record(
            "Survival oracles: KM hand values, c-index pair enumeration, log-rank "
            "identity, stage-driven screen with p < 0.01"
        ):
            # Product-limit hand computations on three subjects.
            curve = kaplan_meier(
                [
                    SurvivalRecord("a", 1, True),
                    SurvivalRecord("b", 2, True),
                    SurvivalRecord("c", 3, True),
                ]
            )
            steps = {p.time: p.survival for p in curve.points}
            assert steps[1] == pytest.approx(2 / 3)
            assert steps[2] == pytest.approx(1 / 3)
            assert steps[3] == 0.0
            censored = kaplan_meier(
                [
                    SurvivalRecord("a", 1, True),
                    SurvivalRecord("b", 2, False),
                    SurvivalRecord("c", 3, True),
                ]
            )
            censored_steps = {p.time: p.survival for p in censored.points}
            assert censored_steps[1] == pytest.approx(2 / 3)
            assert censored_steps[3] == 0.0

            # Concordance equals exhaustive pair enumeration exactly.
            rng = random.Random(515151)
            checked = 0
            while checked < 100:
                n = rng.randint(2, 50)
                records = [
                    SurvivalRecord(f"s{i}", rng.randint(1, 30), rng.random() < 0.7)
                    for i in range(n)
                ]
                scores = {
                    f"s{i}": rng.choice([0.0, 0.5, 1.0, rng.random()]) for i in range(n)
                }
                try:
                    expected = cindex_oracle(scores, records)
                except NoComparablePairsError:
                    continue
                assert concordance_index(scores, records) == expected
                checked += 1

            # Identical groups: statistic 0, p = 1.
            group = [SurvivalRecord(f"g{i}", t, True) for i, t in enumerate((2, 5, 9))]
            twin = [SurvivalRecord(f"h{i}", t, True) for i, t in enumerate((2, 5, 9))]
            statistic, p_value = log_rank(group, twin)
            assert statistic == pytest.approx(0.0, abs=1e-12)
            assert p_value == pytest.approx(1.0)

            # Stage-driven synthetic cohort, n=200.
            stages = ("pT1", "pT2", "pT3", "pT4a", "pT4b")
            field_values = {}
            records = []
            stage_scores = {}
            for i in range(200):
                sid = f"s{i:03d}"
                stage_index = rng.randrange(len(stages))
                event_time = 1500 - 250 * stage_index + rng.randint(0, 100)
                field_values[sid] = {
                    "local_invasion": FieldValue.canonical(stages[stage_index]),
                    "histologic_grade": FieldValue.canonical(rng.choice(["Low", "High"])),
                    "examined_nodes": FieldValue.count(rng.randint(5, 30)),
                    "tumour_site": FieldValue.canonical("Rectum"),
                }
                records.append(SurvivalRecord(sid, event_time, rng.random() < 0.85))
                stage_scores[sid] = float(stage_index)
            screen = univariate_field_screen(field_values, records)
            assert screen[0].field_id == "local_invasion"
            groups = stratify_median(stage_scores)
            by_id = {r.subject_id: r for r in records}
            _, p_split = log_rank(
                [by_id[s] for s in groups.high_risk],
                [by_id[s] for s in groups.low_risk],
            )
            assert p_split < 0.01


class TestNormalisationTable:
    def test_every_alias_round_trips(self, acceptance):
        with acceptance.record(
            "Normalisation table: every schema alias round-trips to its canonical value"
        ):
            catalogue = default_catalogue()
            checked = 0
            for spec in catalogue:
                for surface, target in spec.alias_map.items():
                    value = catalogue.normalise(spec.field_id, surface)
                    assert value == FieldValue.canonical(target), (spec.field_id, surface)
                    round_tripped = catalogue.normalise(spec.field_id, value.canonical_text())
                    assert round_tripped == value
                    checked += 1
            assert checked > 50
            assert catalogue.normalise("local_invasion", "T4A") == FieldValue.canonical("pT4a")
            assert catalogue.normalise("histologic_grade", "1") == FieldValue.canonical("High")


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="class")
def running_service(tmp_path_factory):
    base = tmp_path_factory.mktemp("service")
    script_path = _script_file(base)
    config_path = base / "service_config.json"
    config_path.write_text(
        json.dumps(
            {
                "backend": "mock",
                "script_path": str(script_path),
                "n_extractor": 6,
                "n_validator": 3,
                "seed": 31,
            }
        )
    )
    port = _free_port()
    process = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "pathproforma.cli",
            "serve",
            "--port",
            str(port),
            "--config",
            str(config_path),
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
    )
    base_url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            if process.poll() is not None:
                raise RuntimeError(
                    f"service died: {process.stdout.read().decode(errors='replace')}"
                )
            try:
                httpx.get(f"{base_url}/api/reports/none", timeout=1.0)
                break
            except httpx.TransportError:
                time.sleep(0.1)
        else:
            raise RuntimeError("service never came up")
        yield base_url
    finally:
        process.terminate()
        process.wait(timeout=10)


class TestServiceContract:
    def test_full_review_cycle_over_http(self, acceptance, running_service):
        with acceptance.record(
            "Service contract: upload-poll-override-export cycle with 409/422 paths "
            "against the running service"
        ):
            base = running_service
            with httpx.Client(base_url=base, timeout=30.0) as client:
                # Upload a text report.
                submitted = client.post(
                    "/api/reports",
                    content=REPORT_TEXT,
                    headers={"content-type": "text/plain"},
                )
                assert submitted.status_code == 202
                report_id = submitted.json()["report_id"]
                assert submitted.json()["status"] == "queued"

                # Poll until complete.
                deadline = time.monotonic() + 30
                session = None
                while time.monotonic() < deadline:
                    session = client.get(f"/api/reports/{report_id}").json()
                    if session["status"] == "complete":
                        break
                    time.sleep(0.05)
                assert session is not None and session["status"] == "complete"
                assert len(session["fields"]) == 11

                # 422: an override value that fails normalisation.
                bad = client.patch(
                    f"/api/reports/{report_id}/fields/local_invasion",
                    json={"value": "banana", "note": ""},
                )
                assert bad.status_code == 422

                # 409: a failed (hence never complete) session rejects overrides.
                failed_upload = client.post(
                    "/api/reports",
                    files={"file": ("blank.png", b"\x89PNG fake", "image/png")},
                )
                failed_id = failed_upload.json()["report_id"]
                while time.monotonic() < deadline:
                    failed_session = client.get(f"/api/reports/{failed_id}").json()
                    if failed_session["status"] in ("complete", "failed"):
                        break
                    time.sleep(0.05)
                assert failed_session["status"] == "failed"
                conflict = client.patch(
                    f"/api/reports/{failed_id}/fields/histologic_grade",
                    json={"value": "Low", "note": ""},
                )
                assert conflict.status_code == 409

                # Override, then export both formats.
                override = client.patch(
                    f"/api/reports/{report_id}/fields/tumour_site",
                    json={"value": "Rectum", "note": "reviewed"},
                )
                assert override.status_code == 200
                assert override.json()["override"]["value"] == "Rectum"

                proforma = client.get(
                    f"/api/reports/{report_id}/export", params={"format": "proforma"}
                )
                assert proforma.status_code == 200
                assert "(reviewer override)" in proforma.text
                assert len(proforma.text.strip().split("\n")) == 11

                exported = client.get(
                    f"/api/reports/{report_id}/export", params={"format": "json"}
                )
                assert exported.status_code == 200
                assert "exported_at" in exported.json()

                unsupported = client.get(
                    f"/api/reports/{report_id}/export", params={"format": "pdf"}
                )
                assert unsupported.status_code == 400
