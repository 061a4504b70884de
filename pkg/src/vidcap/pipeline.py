"""End-to-end orchestration: split -> fanout -> select, with resumable
checkpoints.

Every stage appends line-delimited records keyed by clip_id and skips keys
already on disk, so re-running after a crash (or an operator kill) converges
on byte-identical outputs. The checkpoint stores a config hash and refuses
to resume when thresholds changed.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .backends import CaptionBackend, EmbeddingBackend, ScoreBackend, Transport, make_client
from .catalog import (
    CheckpointStore,
    JobCheckpoint,
    ManifestRecord,
    ManifestWriter,
    config_hash,
)
from .config import PipelineConfig
from .fanout import fanout
from .fixtures import discover_sources, load_sidecar
from .ingest import open_source, per_second_keyframes
from .model import CaptionCandidate, ClipRecord
from .selection import ScoreUnavailable, gate, select_best
from .splitter import kept_clips, split_source

logger = logging.getLogger(__name__)

CLIPS_FILE = "clips.jsonl"
CANDIDATES_FILE = "candidates.jsonl"
MANIFEST_FILE = "manifest.jsonl"
PARKED_FILE = "parked.jsonl"
CHECKPOINT_FILE = "checkpoint.json"


class KillSignal(Exception):
    """Raised by fault injection to simulate an operator kill."""


@dataclass(frozen=True)
class FaultInjection:
    stage: str
    after_units: int  # raise once this many units completed in the stage


@dataclass
class RunSummary:
    job_id: str
    sources: int = 0
    kept_clips: int = 0
    manifest_records: int = 0
    parked_clips: int = 0
    validation_failures: int = 0
    stage_reached: str = "split"

    @property
    def ok(self) -> bool:
        return self.parked_clips == 0 and self.validation_failures == 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class _JsonlStore:
    """Append-only JSONL file with idempotent keyed appends."""

    def __init__(self, path: Path, key: str):
        self.path = path
        self.key = key
        self._keys: set[str] = set()
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._keys.add(json.loads(line)[key])
        self._fh = path.open("a", encoding="utf-8")

    def __contains__(self, key: str) -> bool:
        return key in self._keys

    def append_if_absent(self, payload: dict) -> bool:
        key = payload[self.key]
        if key in self._keys:
            return False
        self._fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()
        self._keys.add(key)
        return True

    def close(self):
        self._fh.close()


def read_jsonl(path: Union[str, Path]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def clip_to_payload(clip: ClipRecord, source_file: str) -> dict:
    return {
        "clip_id": clip.clip_id,
        "source_id": clip.source_id,
        "source_file": source_file,
        "start_frame": clip.start_frame,
        "end_frame": clip.end_frame,
        "fps": clip.fps,
        "state": clip.state,
        "drop_reason": clip.drop_reason,
        "endpoint_distance": clip.endpoint_distance,
    }


def payload_to_clip(payload: dict) -> ClipRecord:
    return ClipRecord(
        source_id=payload["source_id"],
        start_frame=payload["start_frame"],
        end_frame=payload["end_frame"],
        fps=payload["fps"],
        state=payload["state"],
        drop_reason=payload.get("drop_reason"),
    )


class Pipeline:
    def __init__(self, config: PipelineConfig, sources_dir: Union[str, Path],
                 workdir: Union[str, Path], job_id: str = "job",
                 transports: Optional[dict[str, Transport]] = None,
                 fault: Optional[FaultInjection] = None):
        self.config = config
        self.sources_dir = Path(sources_dir)
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.job_id = job_id
        self.fault = fault
        transports = transports or {}
        self.clients = {
            b.backend_id: make_client(b, transport=transports.get(b.backend_id))
            for b in config.backends
        }
        self.embed: EmbeddingBackend = self.clients[config.embed_backend_id]
        self.score: ScoreBackend = self.clients[config.score_backend_id]
        self.caption_backends: dict[str, CaptionBackend] = {
            spec.backend_id: self.clients[spec.backend_id] for spec in config.roster
        }
        self.checkpoints = CheckpointStore(self.workdir / CHECKPOINT_FILE)
        self._fault_counter = 0

    # -- plumbing -------------------------------------------------------------

    def _sources(self) -> list[Path]:
        return discover_sources(self.sources_dir)

    def _maybe_kill(self, stage: str) -> None:
        if self.fault and self.fault.stage == stage:
            if self._fault_counter >= self.fault.after_units:
                raise KillSignal(f"injected kill in {stage} after "
                                 f"{self.fault.after_units} units")
            self._fault_counter += 1

    def _workers(self) -> int:
        return self.config.workers or os.cpu_count() or 1

    def health_report(self) -> list:
        return [client.health_check() for client in self.clients.values()]

    # -- stages ---------------------------------------------------------------

    def run_split(self, checkpoint: JobCheckpoint) -> None:
        sources = self._sources()
        store = _JsonlStore(self.workdir / CLIPS_FILE, key="clip_id")
        try:
            done = checkpoint.cursor("split")
            pending = sources[done:]
            workers = min(self._workers(), max(1, len(pending) or 1))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(self._split_one, path) for path in pending
                ]
                try:
                    for path, future in zip(pending, futures):
                        self._maybe_kill("split")
                        records = future.result()
                        for record in records:
                            store.append_if_absent(clip_to_payload(record, path.name))
                        done += 1
                        checkpoint.advance("split", done)
                        self.checkpoints.save(checkpoint)
                except KillSignal:
                    for f in futures:
                        f.cancel()
                    raise
        finally:
            store.close()
        checkpoint.stage = "fanout"
        self.checkpoints.save(checkpoint)

    def _split_one(self, path: Path) -> list[ClipRecord]:
        src = open_source(path)
        try:
            return split_source(src, self.config.splitter, self.embed)
        finally:
            src.close()

    def _kept_by_source(self) -> list[tuple[Path, list[dict]]]:
        """Kept clips grouped by source file, in deterministic order."""
        payloads = [p for p in read_jsonl(self.workdir / CLIPS_FILE)
                    if p["state"] == "kept"]
        by_file: dict[str, list[dict]] = {}
        for p in payloads:
            by_file.setdefault(p["source_file"], []).append(p)
        out = []
        for path in self._sources():
            clips = sorted(by_file.get(path.name, []), key=lambda p: p["start_frame"])
            if clips:
                out.append((path, clips))
        return out

    def run_fanout(self, checkpoint: JobCheckpoint) -> None:
        store = _JsonlStore(self.workdir / CANDIDATES_FILE, key="clip_id")
        parked = _JsonlStore(self.workdir / PARKED_FILE, key="clip_id")
        try:
            groups = self._kept_by_source()
            done_sources = checkpoint.cursor("fanout")
            for src_idx, (path, clip_payloads) in enumerate(groups):
                if src_idx < done_sources:
                    continue
                src = open_source(path)
                meta = load_sidecar(path, src.source_id, src.frame_count, src.fps)
                try:
                    for payload in clip_payloads:
                        clip = payload_to_clip(payload)
                        if clip.clip_id in store or clip.clip_id in parked:
                            continue
                        self._maybe_kill("fanout")
                        result = fanout(clip, meta, src, list(self.config.roster),
                                        self.caption_backends)
                        if result.parked:
                            parked.append_if_absent({
                                "clip_id": clip.clip_id, "stage": "fanout",
                                "errors": [f.error for f in result.failures],
                            })
                            continue
                        store.append_if_absent({
                            "clip_id": clip.clip_id,
                            "source_id": clip.source_id,
                            "source_file": payload["source_file"],
                            "start_frame": clip.start_frame,
                            "end_frame": clip.end_frame,
                            "fps": clip.fps,
                            "candidates": [
                                {"teacher_id": c.teacher_id, "text": c.text,
                                 "inputs_used": sorted(c.inputs_used)}
                                for c in result.candidates
                            ],
                            "failures": [
                                {"teacher_id": f.teacher_id, "error": f.error}
                                for f in result.failures
                            ],
                        })
                finally:
                    src.close()
                checkpoint.advance("fanout", src_idx + 1)
                self.checkpoints.save(checkpoint)
        finally:
            store.close()
            parked.close()
        checkpoint.stage = "select"
        self.checkpoints.save(checkpoint)

    def run_select(self, checkpoint: JobCheckpoint) -> None:
        manifest = ManifestWriter(self.workdir / MANIFEST_FILE)
        parked = _JsonlStore(self.workdir / PARKED_FILE, key="clip_id")
        candidate_lines = read_jsonl(self.workdir / CANDIDATES_FILE)
        by_file: dict[str, list[dict]] = {}
        for line in candidate_lines:
            by_file.setdefault(line["source_file"], []).append(line)
        try:
            done_sources = checkpoint.cursor("select")
            groups = [(p, by_file[p.name]) for p in self._sources() if p.name in by_file]
            for src_idx, (path, lines) in enumerate(groups):
                if src_idx < done_sources:
                    continue
                src = open_source(path)
                try:
                    for line in sorted(lines, key=lambda l: l["start_frame"]):
                        if line["clip_id"] in manifest or line["clip_id"] in parked:
                            continue
                        self._maybe_kill("select")
                        self._select_one(line, src, manifest, parked)
                finally:
                    src.close()
                checkpoint.advance("select", src_idx + 1)
                self.checkpoints.save(checkpoint)
        finally:
            manifest.close()
            parked.close()
        checkpoint.stage = "done"
        self.checkpoints.save(checkpoint)

    def _select_one(self, line: dict, src, manifest: ManifestWriter,
                    parked: _JsonlStore) -> None:
        candidates = [
            CaptionCandidate(clip_id=line["clip_id"], teacher_id=c["teacher_id"],
                             text=c["text"], inputs_used=frozenset(c["inputs_used"]))
            for c in line["candidates"]
        ]
        frames = per_second_keyframes(src, line["start_frame"], line["end_frame"])
        try:
            chosen, _all = select_best(frames, candidates, self.score)
        except ScoreUnavailable as exc:
            parked.append_if_absent({"clip_id": line["clip_id"], "stage": "select",
                                     "errors": [str(exc)]})
            return
        record = ManifestRecord(
            clip_id=line["clip_id"],
            source_id=line["source_id"],
            start_frame=line["start_frame"],
            end_frame=line["end_frame"],
            fps=line["fps"],
            caption=chosen.candidate.text,
            teacher_id=chosen.candidate.teacher_id,
            matching_score=chosen.matching_score,
            gate=gate(chosen, self.config.score_threshold),
            inputs_used=tuple(sorted(chosen.candidate.inputs_used)),
        )
        manifest.append_if_absent(record)

    # -- entry points ---------------------------------------------------------

    def run_all(self, stop_after: Optional[str] = None) -> RunSummary:
        cfg_hash = config_hash(self.config.to_payload())
        checkpoint = self.checkpoints.resume(self.job_id, cfg_hash)
        stage_order = ["split", "fanout", "select", "done"]
        while checkpoint.stage != "done":
            stage = checkpoint.stage
            if stage == "split":
                self.run_split(checkpoint)
            elif stage == "fanout":
                self.run_fanout(checkpoint)
            elif stage == "select":
                self.run_select(checkpoint)
            if stop_after == stage:
                break
        return self.summary()

    def summary(self) -> RunSummary:
        checkpoint = self.checkpoints.load()
        clips = read_jsonl(self.workdir / CLIPS_FILE)
        manifest_lines = read_jsonl(self.workdir / MANIFEST_FILE)
        parked_lines = read_jsonl(self.workdir / PARKED_FILE)
        failures = 0
        for line in manifest_lines:
            record = ManifestRecord(**{**line, "inputs_used": tuple(line["inputs_used"])})
            failures += 1 if record.validate() else 0
        return RunSummary(
            job_id=self.job_id,
            sources=len(self._sources()),
            kept_clips=sum(1 for c in clips if c["state"] == "kept"),
            manifest_records=len(manifest_lines),
            parked_clips=len(parked_lines),
            validation_failures=failures,
            stage_reached=checkpoint.stage if checkpoint else "split",
        )
