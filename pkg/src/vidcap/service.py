"""HTTP annotation service: task leasing, result intake, media previews,
selective-rate stats, and the retrieval-dataset export.

Results append to results.jsonl in the workdir and are replayed on startup,
so a restarted service does not hand out already-annotated tasks.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response

from .annotation import (
    AnnotationError,
    InvalidSelection,
    PoolExhausted,
    StaleLease,
    TaskPool,
    create_tasks,
    export_retrieval_dataset,
    goodness_matrix,
)
from .ingest import open_source, per_second_keyframes
from .model import ALL_BAD, AnnotationResult, CaptionCandidate
from .pipeline import CANDIDATES_FILE, read_jsonl
from .selection import selective_rates

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"

_INSTRUCTIONS = {}


def instruction_text(mode: str) -> str:
    if mode not in _INSTRUCTIONS:
        name = f"instructions_{mode}.txt"
        _INSTRUCTIONS[mode] = (
            importlib_resources.files("vidcap.resources").joinpath(name)
            .read_text(encoding="utf-8").strip()
        )
    return _INSTRUCTIONS[mode]


@dataclass(frozen=True)
class ClipMedia:
    source_file: str
    start_frame: int
    end_frame: int
    fps: float


class AnnotationService:
    """Bundles the task pool with clip media access and result persistence."""

    def __init__(self, pool: TaskPool, candidates_by_clip: dict[str, list[CaptionCandidate]],
                 media: dict[str, ClipMedia], sources_dir: Union[str, Path],
                 workdir: Union[str, Path]):
        self.pool = pool
        self.candidates_by_clip = candidates_by_clip
        self.tasks_by_id = {t.task_id: t for t in pool.tasks()}
        self.media = media
        self.sources_dir = Path(sources_dir)
        self.workdir = Path(workdir)
        self.results_path = self.workdir / RESULTS_FILE
        self._replay_results()

    @classmethod
    def from_workdir(cls, workdir: Union[str, Path], sources_dir: Union[str, Path],
                     mode: str, page_size: int = 11, shuffle_seed: int = 0,
                     annotators_per_task: int = 1,
                     lease_ttl_seconds: float = 600.0) -> "AnnotationService":
        """Build the study from a pipeline workdir's candidates file."""
        lines = read_jsonl(Path(workdir) / CANDIDATES_FILE)
        if not lines:
            raise AnnotationError(f"no candidates found under {workdir}")
        candidates_by_clip = {}
        media = {}
        for line in sorted(lines, key=lambda l: l["clip_id"]):
            candidates_by_clip[line["clip_id"]] = [
                CaptionCandidate(clip_id=line["clip_id"], teacher_id=c["teacher_id"],
                                 text=c["text"], inputs_used=frozenset(c["inputs_used"]))
                for c in line["candidates"]
            ]
            media[line["clip_id"]] = ClipMedia(
                source_file=line["source_file"], start_frame=line["start_frame"],
                end_frame=line["end_frame"], fps=line["fps"],
            )
        tasks = create_tasks(candidates_by_clip, mode, page_size=page_size,
                             shuffle_seed=shuffle_seed)
        pool = TaskPool(tasks, annotators_per_task=annotators_per_task,
                        lease_ttl_seconds=lease_ttl_seconds)
        return cls(pool, candidates_by_clip, media, sources_dir, workdir)

    def _replay_results(self) -> None:
        for line in read_jsonl(self.results_path):
            selection = line["selection"]
            if isinstance(selection, list):
                selection = tuple(selection)
            self.pool.restore(AnnotationResult(
                task_id=line["task_id"], annotator_id=line["annotator_id"],
                selection=selection,
            ))

    def persist_result(self, result: AnnotationResult) -> None:
        selection = result.selection
        if isinstance(selection, tuple):
            selection = list(selection)
        line = json.dumps({"task_id": result.task_id,
                           "annotator_id": result.annotator_id,
                           "selection": selection}, sort_keys=True)
        with self.results_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def task_payload(self, task) -> dict:
        candidates = self.candidates_by_clip[task.clip_id]
        return {
            "task_id": task.task_id,
            "clip_id": task.clip_id,
            "mode": task.mode,
            "instruction": instruction_text(task.mode),
            "captions": [candidates[i].text for i in task.caption_order],
            "media_url": f"/clips/{task.clip_id}/media",
            "lease_expiry": task.lease.expiry_time if task.lease else None,
            "max_captions_per_page": task.page_size,
        }

    def media_strip_png(self, clip_id: str) -> bytes:
        """Horizontal strip of the clip's per-second keyframes, as PNG."""
        from PIL import Image

        if clip_id not in self.media:
            raise KeyError(clip_id)
        info = self.media[clip_id]
        src = open_source(self.sources_dir / info.source_file)
        try:
            frames = per_second_keyframes(src, info.start_frame, info.end_frame)
        finally:
            src.close()
        strip = np.concatenate([f.pixels for f in frames], axis=1)
        image = Image.fromarray(strip, mode="RGB")
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return buf.getvalue()

    def selective_rate_stats(self) -> dict[str, float]:
        chosen = []
        for result in self.pool.results():
            task = self.tasks_by_id.get(result.task_id)
            if task is None or task.mode != "best_caption":
                continue
            if result.selection == ALL_BAD:
                continue
            candidate = self.candidates_by_clip[task.clip_id][result.selection]
            chosen.append(candidate.teacher_id)
        return selective_rates(chosen)

    def export(self, train_fraction: float, seed: int):
        return export_retrieval_dataset(self.pool.results(), self.tasks_by_id,
                                        self.candidates_by_clip,
                                        train_fraction=train_fraction, seed=seed)

    def goodness_export(self) -> dict:
        """Goodness matrix JSON in the shape pick-teachers consumes."""
        report = goodness_matrix(self.pool.results(), self.tasks_by_id,
                                 self.candidates_by_clip)
        return {
            "video_ids": list(report.matrix.video_ids),
            "model_ids": list(report.matrix.model_ids),
            "cells": report.matrix.cells.astype(int).tolist(),
            "model_good_rates": report.model_good_rates,
            "all_bad_rate": report.all_bad_rate,
        }


def create_app(service: AnnotationService) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="annotation service", version="1")
    # The UI is a static page served from anywhere (file://, dev server).
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/health")
    def health():
        return {"v": 1, "status": "ok"}

    @app.get("/tasks/lease")
    def lease(annotator: str = Query(...), ttl: Optional[float] = None):
        try:
            task = service.pool.lease(annotator, ttl_seconds=ttl)
        except PoolExhausted as exc:
            raise HTTPException(status_code=404,
                                detail={"error": "pool_exhausted", "message": str(exc)})
        payload = service.task_payload(task)
        payload["progress"] = service.pool.progress(annotator)
        return payload

    @app.post("/tasks/{task_id}/result")
    def submit(task_id: str, body: dict):
        annotator = body.get("annotator_id")
        if not annotator:
            raise HTTPException(status_code=400,
                                detail={"error": "invalid", "message": "annotator_id required"})
        positions = body.get("positions") or []
        all_bad = bool(body.get("all_bad", False))
        try:
            result = service.pool.submit(task_id, annotator, positions=positions,
                                         all_bad=all_bad)
        except StaleLease as exc:
            raise HTTPException(status_code=409,
                                detail={"error": "stale_lease", "message": str(exc)})
        except InvalidSelection as exc:
            raise HTTPException(status_code=400,
                                detail={"error": "invalid_selection", "message": str(exc)})
        except AnnotationError as exc:
            raise HTTPException(status_code=404,
                                detail={"error": "unknown_task", "message": str(exc)})
        service.persist_result(result)
        selection = result.selection
        if isinstance(selection, tuple):
            selection = list(selection)
        return {"stored": True, "task_id": task_id, "selection": selection,
                "progress": service.pool.progress(annotator)}

    @app.get("/clips/{clip_id}/media")
    def media(clip_id: str):
        try:
            png = service.media_strip_png(clip_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"error": "unknown_clip", "message": clip_id})
        return Response(content=png, media_type="image/png")

    @app.get("/stats/selective-rates")
    def rates():
        try:
            return service.selective_rate_stats()
        except ValueError:
            return {}

    @app.get("/export/retrieval")
    def export(train_fraction: float = 0.8, seed: int = 0):
        try:
            split = service.export(train_fraction, seed)
        except AnnotationError as exc:
            raise HTTPException(status_code=404,
                                detail={"error": "empty_export", "message": str(exc)})
        def encode(records):
            return [{"clip_id": r.clip_id, "positive": r.positive,
                     "hard_negatives": list(r.hard_negatives)} for r in records]
        return {"train": encode(split.train), "val": encode(split.val)}

    @app.get("/export/goodness")
    def goodness():
        try:
            return service.goodness_export()
        except AnnotationError as exc:
            raise HTTPException(status_code=404,
                                detail={"error": "empty_export", "message": str(exc)})

    return app
