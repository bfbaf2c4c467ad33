"""Command-line interface: extract, calibrate, evaluate, survival, serve."""

from __future__ import annotations

import json
import logging
import sys

import click

from .errors import (
    AuthError,
    MissingLabelsError,
    MissingOutcomesError,
    NoComparablePairsError,
    NoEventsError,
    NoUsableFieldsError,
)
from .pipeline import PipelineConfig, run_calibration, run_evaluation, run_extraction, run_survival


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Standardise colorectal pathology reports with confidence scores."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(config_path: str | None, **overrides) -> PipelineConfig:
    config = PipelineConfig.from_file(config_path) if config_path else PipelineConfig()
    for key, value in overrides.items():
        if value is not None and value != ():
            setattr(config, key, value)
    return config


@main.command()
@click.option("--input", "inputs", multiple=True, required=True,
              type=click.Path(exists=True), help="Report file (.txt or image); repeatable.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Pipeline config JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Run output directory.")
@click.option("--backend", type=click.Choice(["live", "mock"]), default=None)
@click.option("--script", "script_path", type=click.Path(exists=True), help="Mock script JSON.")
@click.option("--fields", default=None, help="Comma-separated field subset (ids or names).")
@click.option("--schema", "schema_path", type=click.Path(exists=True), help="Field catalogue JSON.")
@click.option("--prompts", "prompts_path", type=click.Path(exists=True), help="Prompt templates JSON.")
@click.option("--calibration", "calibration_path", type=click.Path(exists=True),
              help="Calibration JSON from the calibrate command.")
@click.option("--seed", type=int, default=None, help="Seed override for the mock backend.")
@click.option("--canonical-output", is_flag=True, default=None,
              help="Omit timestamps so reruns are byte-identical.")
def extract(inputs, config_path, out_dir, backend, script_path, fields, schema_path,
            prompts_path, calibration_path, seed, canonical_output):
    """Run the two-stage extraction pipeline over report files."""
    config = _load_config(
        config_path,
        backend=backend,
        script_path=script_path,
        schema_path=schema_path,
        prompts_path=prompts_path,
        calibration_path=calibration_path,
        seed=seed,
        canonical_output=canonical_output,
        fields=[t.strip() for t in fields.split(",")] if fields else None,
    )
    try:
        run_dir = run_extraction(list(inputs), config, out_dir)
    except AuthError as exc:
        raise click.ClickException(f"authentication failed: {exc}")
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    totals = manifest["totals"]
    click.echo(
        f"run complete: {len(manifest['reports'])} reports, "
        f"{totals['fields_ok']} fields ok, {totals['fields_failed']} failed -> {run_dir}"
    )


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def calibrate(run_dir, labels_path, out_path):
    """Fit per-field confidence calibration from a labelled run."""
    try:
        model, skipped = run_calibration(run_dir, labels_path, out_path)
    except NoUsableFieldsError as exc:
        raise click.ClickException(str(exc))
    for field_id, reason in sorted(skipped.items()):
        click.echo(f"skipped {field_id}: {reason}", err=True)
    click.echo(f"calibrated {len(model.entries)} fields -> {out_path}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--calibration", "calibration_path", type=click.Path(exists=True), default=None)
@click.option("--use-calibrated", is_flag=True, help="Rank by calibrated instead of raw confidence.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def evaluate(run_dir, labels_path, calibration_path, use_calibrated, out_dir):
    """Measure how well confidence predicts extraction correctness."""
    try:
        report = run_evaluation(
            run_dir,
            labels_path,
            out_dir,
            calibration_path=calibration_path,
            use_calibrated=use_calibrated,
        )
    except MissingLabelsError as exc:
        raise click.ClickException(str(exc))
    for metrics in report.per_field:
        area = "n/a" if metrics.auroc is None else f"{metrics.auroc:.3f}"
        click.echo(f"{metrics.field_id}: n={metrics.n} accuracy={metrics.accuracy:.3f} auroc={area}")
    pooled = report.pooled
    area = "n/a" if pooled.auroc is None else f"{pooled.auroc:.3f}"
    click.echo(f"pooled: n={pooled.n} accuracy={pooled.accuracy:.3f} auroc={area}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--outcomes", "outcomes_path", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="External risk scores CSV (subject_id,score) for median-split KM curves.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def survival(run_dir, outcomes_path, scores_path, out_dir):
    """Survival analysis over a run: field screen and risk stratification."""
    try:
        summary = run_survival(run_dir, outcomes_path, out_dir, scores_path=scores_path)
    except (NoEventsError, NoComparablePairsError, MissingOutcomesError) as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="Service config JSON (pipeline keys plus optional service block).")
def serve(port, host, config_path):
    """Run the report review HTTP service."""
    import uvicorn

    from .service import build_app, load_service_config

    service_config = load_service_config(config_path)
    app = build_app(service_config)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
