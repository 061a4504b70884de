"""Operator command line for the captioning pipeline."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import catalog
from .config import ConfigError, PipelineConfig, default_mock_config, load_config, write_default_config
from .fixtures import build_corpus
from .model import GoodnessMatrix
from .pipeline import MANIFEST_FILE, Pipeline, RunSummary
from .teacher_pick import coverage_curve, greedy_select, single_best_rate

logger = logging.getLogger(__name__)


def _load_cfg(config_path) -> PipelineConfig:
    if config_path is None:
        return default_mock_config()
    return load_config(config_path)


def _fail(code: int, error: str, **details) -> None:
    click.echo(json.dumps({"error": error, **details}, sort_keys=True), err=True)
    sys.exit(code)


def _preflight(pipeline: Pipeline) -> None:
    """Backend health failures are reported before any work starts."""
    unhealthy = [s for s in pipeline.health_report() if s.status != "healthy"]
    if unhealthy:
        _fail(2, "backend_unhealthy",
              backends=[{"backend_id": s.backend_id, "status": s.status}
                        for s in unhealthy])


def _finish(summary: RunSummary) -> None:
    click.echo(summary.to_json())
    sys.exit(0 if summary.ok else 1)


def _pipeline(config_path, sources, workdir, job_id) -> Pipeline:
    try:
        cfg = _load_cfg(config_path)
    except ConfigError as exc:
        _fail(2, "invalid_config", message=str(exc))
    click.echo("effective configuration:", err=True)
    click.echo(cfg.dump_effective(), err=True)
    pipeline = Pipeline(cfg, sources, workdir, job_id=job_id)
    _preflight(pipeline)
    return pipeline


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="TOML config; defaults to built-in mock backends.")
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config_path, verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    ctx.obj = {"config_path": config_path}


@main.command()
@click.option("--sources", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--workdir", required=True, type=click.Path(path_type=Path))
@click.option("--job-id", default="job")
@click.pass_context
def split(ctx, sources, workdir, job_id):
    """Split source videos into clip records."""
    pipeline = _pipeline(ctx.obj["config_path"], sources, workdir, job_id)
    try:
        pipeline.run_all(stop_after="split")
    except catalog.CheckpointMismatch as exc:
        _fail(2, "checkpoint_mismatch", message=str(exc))
    _finish(pipeline.summary())


@main.command()
@click.option("--sources", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--workdir", required=True, type=click.Path(path_type=Path))
@click.option("--job-id", default="job")
@click.pass_context
def caption(ctx, sources, workdir, job_id):
    """Fan kept clips out to the teacher roster."""
    pipeline = _pipeline(ctx.obj["config_path"], sources, workdir, job_id)
    try:
        pipeline.run_all(stop_after="fanout")
    except catalog.CheckpointMismatch as exc:
        _fail(2, "checkpoint_mismatch", message=str(exc))
    _finish(pipeline.summary())


@main.command()
@click.option("--sources", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--workdir", required=True, type=click.Path(path_type=Path))
@click.option("--job-id", default="job")
@click.pass_context
def select(ctx, sources, workdir, job_id):
    """Score candidates and write the best-caption manifest."""
    pipeline = _pipeline(ctx.obj["config_path"], sources, workdir, job_id)
    try:
        pipeline.run_all(stop_after="select")
    except catalog.CheckpointMismatch as exc:
        _fail(2, "checkpoint_mismatch", message=str(exc))
    _finish(pipeline.summary())


@main.command(name="run-all")
@click.option("--sources", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--workdir", required=True, type=click.Path(path_type=Path))
@click.option("--job-id", default="job")
@click.pass_context
def run_all(ctx, sources, workdir, job_id):
    """Split, caption, and select with checkpoints."""
    pipeline = _pipeline(ctx.obj["config_path"], sources, workdir, job_id)
    try:
        summary = pipeline.run_all()
    except catalog.CheckpointMismatch as exc:
        _fail(2, "checkpoint_mismatch", message=str(exc))
    _finish(summary)


@main.command(name="pick-teachers")
@click.option("--matrix", "matrix_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="JSON file: {video_ids, model_ids, cells}.")
@click.option("--k", default=8, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def pick_teachers(matrix_path, k, as_json):
    """Greedy max-coverage teacher subset from a goodness matrix."""
    data = json.loads(Path(matrix_path).read_text(encoding="utf-8"))
    matrix = GoodnessMatrix(video_ids=tuple(data["video_ids"]),
                            model_ids=tuple(data["model_ids"]),
                            cells=np.array(data["cells"], dtype=bool))
    try:
        picks = greedy_select(matrix, k)
        curve = coverage_curve(matrix, k)
    except ValueError as exc:
        _fail(2, "invalid_matrix", message=str(exc))
    best_model, best_rate = single_best_rate(matrix)
    if as_json:
        click.echo(json.dumps({
            "picks": picks,
            "coverage_curve": [{"model": m, "coverage": c} for m, c in curve],
            "single_best": {"model": best_model, "rate": best_rate},
        }, sort_keys=True))
    else:
        click.echo("picks: " + " ".join(picks))
        for model, cov in curve:
            click.echo(f"  +{model}: coverage {cov:.3f}")
        click.echo(f"single best: {best_model} ({best_rate:.3f})")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True, default=False)
def stats(manifest_path, as_json):
    """Dataset statistics report for a manifest."""
    records = list(catalog.read_manifest(manifest_path))
    try:
        report = catalog.stats(records)
    except catalog.CatalogError as exc:
        _fail(2, "empty_manifest", message=str(exc))
    click.echo(report.to_json() if as_json else report.to_text())


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--count", default=54, show_default=True)
@click.option("--seed", default=0, show_default=True)
def fixtures(out_dir, count, seed):
    """Emit the synthetic test corpus plus a starter config."""
    if count < 1:
        _fail(2, "invalid_count", message="count must be >= 1")
    entries = build_corpus(out_dir, count=count, seed=seed)
    write_default_config(Path(out_dir) / "config.toml")
    click.echo(json.dumps({"videos": len(entries), "dir": str(out_dir)}))


@main.command()
@click.option("--workdir", required=True, type=click.Path(path_type=Path))
@click.option("--sources", type=click.Path(path_type=Path), default=None)
@click.option("--mode", type=click.Choice(["best_caption", "every_good"]),
              default="best_caption", show_default=True)
@click.option("--page-size", default=11, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--annotators-per-task", default=1, show_default=True)
@click.option("--lease-ttl", default=600.0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--demo", is_flag=True, default=False,
              help="Build a small mock corpus and pipeline output first.")
@click.pass_context
def serve(ctx, workdir, sources, mode, page_size, seed, annotators_per_task,
          lease_ttl, host, port, demo):
    """Start the human annotation service."""
    import uvicorn

    from .service import AnnotationService, create_app

    workdir = Path(workdir)
    if demo:
        sources = workdir / "demo_sources"
        if not (sources / "corpus.json").exists():
            build_corpus(sources, count=6, seed=seed)
        cfg = default_mock_config(seed=seed)
        pipeline = Pipeline(cfg, sources, workdir, job_id="demo")
        pipeline.run_all()
    if sources is None:
        _fail(2, "missing_sources", message="--sources is required without --demo")
    try:
        service = AnnotationService.from_workdir(
            workdir, sources, mode, page_size=page_size, shuffle_seed=seed,
            annotators_per_task=annotators_per_task, lease_ttl_seconds=lease_ttl,
        )
    except Exception as exc:
        _fail(2, "service_setup_failed", message=str(exc))
    app = create_app(service)
    click.echo(json.dumps({"serving": f"http://{host}:{port}", "mode": mode,
                           "tasks": len(service.tasks_by_id)}), err=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
