"""Persistence: line-delimited manifests, resumable job checkpoints, stats.

The manifest is line-delimited JSON with sorted keys and no extra
whitespace, so equal records serialize to equal bytes and whole files can
be diffed. One line per kept clip; appends flush immediately so a crash
loses at most the in-flight record.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterator, Optional, Union

from .model import Violation

# Comparison anchors from the production-scale run of this pipeline design;
# printed in report footers so desk-scale outputs have a reference point.
REFERENCE_MEAN_CLIP_SECONDS = 8.477
REFERENCE_MEAN_CAPTION_WORDS = 13.2

MANIFEST_FIELDS = (
    "clip_id", "source_id", "start_frame", "end_frame", "fps", "caption",
    "teacher_id", "matching_score", "gate", "inputs_used",
)


class CatalogError(Exception):
    pass


class DuplicateClipError(CatalogError):
    pass


class InvalidRecordError(CatalogError):
    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class CheckpointMismatch(CatalogError):
    """Configuration changed since the checkpoint was written."""


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    source_id: str
    start_frame: int
    end_frame: int
    fps: float
    caption: str
    teacher_id: str
    matching_score: float
    gate: str
    inputs_used: tuple[str, ...]

    @property
    def duration_seconds(self) -> float:
        return (self.end_frame - self.start_frame) / self.fps

    def to_json(self) -> str:
        payload = asdict(self)
        payload["inputs_used"] = sorted(self.inputs_used)
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        data = json.loads(line)
        data["inputs_used"] = tuple(data["inputs_used"])
        return cls(**data)

    def validate(self) -> list[Violation]:
        out = []
        if not self.clip_id:
            out.append(Violation("clip_id", "must be nonempty"))
        if self.start_frame < 0 or self.start_frame >= self.end_frame:
            out.append(Violation("end_frame", "invalid frame interval"))
        if not (self.fps > 0 and math.isfinite(self.fps)):
            out.append(Violation("fps", "must be > 0"))
        if not self.caption.strip():
            out.append(Violation("caption", "must be nonempty"))
        if not self.teacher_id:
            out.append(Violation("teacher_id", "must be nonempty"))
        if not math.isfinite(self.matching_score):
            out.append(Violation("matching_score", "must be finite"))
        if self.gate not in ("strong", "weak"):
            out.append(Violation("gate", "must be strong|weak"))
        if not self.inputs_used:
            out.append(Violation("inputs_used", "must be nonempty"))
        return out


class ManifestWriter:
    """Single appending writer for one manifest shard."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._ids: set[str] = set()
        if self.path.exists():
            for record in read_manifest(self.path):
                self._ids.add(record.clip_id)
        self._fh = self.path.open("a", encoding="utf-8")

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._ids

    def append(self, record: ManifestRecord) -> None:
        violations = record.validate()
        if violations:
            raise InvalidRecordError(violations)
        if record.clip_id in self._ids:
            raise DuplicateClipError(record.clip_id)
        self._fh.write(record.to_json() + "\n")
        self._fh.flush()
        self._ids.add(record.clip_id)

    def append_if_absent(self, record: ManifestRecord) -> bool:
        """Idempotent append used on resume; returns False when skipped."""
        if record.clip_id in self._ids:
            return False
        self.append(record)
        return True

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_manifest(path: Union[str, Path]) -> Iterator[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield ManifestRecord.from_json(line)


def merge_shards(shard_paths: list[Union[str, Path]], out_path: Union[str, Path]) -> int:
    """Concatenate shards and sort by clip_id; deterministic merge step."""
    records = []
    for shard in shard_paths:
        records.extend(read_manifest(shard))
    records.sort(key=lambda r: r.clip_id)
    out_path = Path(out_path)
    with out_path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    return len(records)


# --- job checkpoints ---------------------------------------------------------

STAGES = ("split", "fanout", "select", "done")


def config_hash(config_payload: dict) -> str:
    canonical = json.dumps(config_payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class JobCheckpoint:
    job_id: str
    config_hash: str
    stage: str = "split"
    cursors: dict[str, int] = field(default_factory=dict)  # stage -> sources done

    def cursor(self, stage: str) -> int:
        return self.cursors.get(stage, 0)

    def advance(self, stage: str, done: int) -> None:
        self.cursors[stage] = done

    def to_json(self) -> str:
        return json.dumps(
            {"job_id": self.job_id, "config_hash": self.config_hash,
             "stage": self.stage, "cursors": self.cursors},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "JobCheckpoint":
        data = json.loads(text)
        return cls(job_id=data["job_id"], config_hash=data["config_hash"],
                   stage=data["stage"], cursors=dict(data["cursors"]))


class CheckpointStore:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def save(self, checkpoint: JobCheckpoint) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(checkpoint.to_json() + "\n", encoding="utf-8")
        os.replace(tmp, self.path)

    def load(self) -> Optional[JobCheckpoint]:
        if not self.path.exists():
            return None
        return JobCheckpoint.from_json(self.path.read_text(encoding="utf-8"))

    def resume(self, job_id: str, cfg_hash: str) -> JobCheckpoint:
        """Load the checkpoint for a job, refusing on config changes."""
        existing = self.load()
        if existing is None:
            return JobCheckpoint(job_id=job_id, config_hash=cfg_hash)
        if existing.job_id != job_id:
            return JobCheckpoint(job_id=job_id, config_hash=cfg_hash)
        if existing.config_hash != cfg_hash:
            raise CheckpointMismatch(
                f"job {job_id}: config hash {cfg_hash[:12]} does not match "
                f"checkpointed {existing.config_hash[:12]}; refusing to resume"
            )
        return existing


# --- dataset statistics ------------------------------------------------------


def _load_stopwords() -> frozenset[str]:
    text = (
        importlib_resources.files("vidcap.resources")
        .joinpath("stopwords.txt")
        .read_text(encoding="utf-8")
    )
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


_WORD_RE = re.compile(r"[a-z0-9']+")


@dataclass
class StatsReport:
    clip_count: int
    mean_duration_seconds: float
    duration_histogram: dict[int, int]  # 1-second bins, keyed by floor(seconds)
    mean_caption_words: float
    caption_length_histogram: dict[int, int]
    top_words: list[tuple[str, int]]
    strong_fraction: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "clip_count": self.clip_count,
                "mean_duration_seconds": self.mean_duration_seconds,
                "duration_histogram": {str(k): v for k, v in sorted(self.duration_histogram.items())},
                "mean_caption_words": self.mean_caption_words,
                "caption_length_histogram": {str(k): v for k, v in sorted(self.caption_length_histogram.items())},
                "top_words": self.top_words,
                "strong_fraction": self.strong_fraction,
                "reference_mean_clip_seconds": REFERENCE_MEAN_CLIP_SECONDS,
                "reference_mean_caption_words": REFERENCE_MEAN_CAPTION_WORDS,
            },
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [
            f"clips: {self.clip_count}",
            f"mean clip duration: {self.mean_duration_seconds:.3f} s",
            "duration histogram (1 s bins):",
        ]
        for bin_s, count in sorted(self.duration_histogram.items()):
            lines.append(f"  [{bin_s:>3},{bin_s + 1:>3}) s: {count}")
        lines.append(f"mean caption length: {self.mean_caption_words:.2f} words")
        lines.append("caption length histogram (words):")
        for words, count in sorted(self.caption_length_histogram.items()):
            lines.append(f"  {words:>3} words: {count}")
        lines.append("top caption words (stop words removed):")
        for word, count in self.top_words:
            lines.append(f"  {word}: {count}")
        lines.append(f"strong-gate fraction: {self.strong_fraction:.3f}")
        lines.append(
            f"reference anchors: {REFERENCE_MEAN_CLIP_SECONDS} s mean clip, "
            f"{REFERENCE_MEAN_CAPTION_WORDS} words mean caption"
        )
        return "\n".join(lines)


def stats(records: list[ManifestRecord], top_k: int = 20) -> StatsReport:
    """Pure summary of a manifest; raises on an empty one."""
    if not records:
        raise CatalogError("manifest is empty")
    stopwords = _load_stopwords()
    durations = [r.duration_seconds for r in records]
    duration_hist = Counter(int(math.floor(d)) for d in durations)
    word_counts = []
    word_freq: Counter = Counter()
    for r in records:
        words = _WORD_RE.findall(r.caption.lower())
        word_counts.append(len(words))
        word_freq.update(w for w in words if w not in stopwords)
    strong = sum(1 for r in records if r.gate == "strong")
    top = sorted(word_freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return StatsReport(
        clip_count=len(records),
        mean_duration_seconds=sum(durations) / len(durations),
        duration_histogram=dict(duration_hist),
        mean_caption_words=sum(word_counts) / len(word_counts),
        caption_length_histogram=dict(Counter(word_counts)),
        top_words=top,
        strong_fraction=strong / len(records),
    )
