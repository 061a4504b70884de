"""Shared domain types for the clip-captioning pipeline.

All records are immutable values; workers may share them freely. Clip
intervals are half-open frame ranges so threshold arithmetic stays exact;
seconds are always derived as frames / fps.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

# Annotator verdict that no candidate caption is acceptable. A distinguished
# value rather than a sentinel index.
ALL_BAD = "ALL_BAD"

CLIP_STATES = ("raw", "shot", "cut5s", "filtered", "stitched", "kept", "dropped")

DROP_REASONS = ("transition", "too_short", "motionless", "duplicate")

ANNOTATION_MODES = ("every_good", "best_caption")

# Hard protocol limit: an annotator is never shown more than this many
# captions on one page.
MAX_CAPTIONS_PER_PAGE = 11

INPUT_KINDS = ("vision", "subtitles", "metadata")


def clip_id_for(source_id: str, start_frame: int, end_frame: int) -> str:
    """Stable content-derived clip identifier; identical across runs."""
    key = f"{source_id}|{start_frame}|{end_frame}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Subtitle:
    start_time: float  # seconds
    end_time: float
    text: str


@dataclass(frozen=True)
class SourceVideo:
    """Metadata for one long source video."""

    id: str
    frame_count: int
    fps: float
    title: Optional[str] = None
    description: Optional[str] = None
    subtitles: tuple[Subtitle, ...] = ()

    @property
    def duration_seconds(self) -> float:
        return self.frame_count / self.fps


@dataclass(frozen=True)
class Keyframe:
    """One decoded RGB frame (H x W x 3, uint8) with its position."""

    source_id: str
    frame_index: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class Embedding:
    """Fixed-length feature vector produced by an embedding backend."""

    vector: np.ndarray
    backend_id: str

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", vec)

    def distance(self, other: "Embedding") -> float:
        """Euclidean distance to another embedding of the same backend."""
        return float(np.linalg.norm(self.vector - other.vector))


def mean_embedding(a: Embedding, b: Embedding) -> Embedding:
    return Embedding(vector=(a.vector + b.vector) / 2.0, backend_id=a.backend_id)


@dataclass(frozen=True)
class ClipRecord:
    """A clip boundary within a source video plus its lifecycle state.

    start/end are a half-open frame interval [start_frame, end_frame).
    """

    source_id: str
    start_frame: int
    end_frame: int
    fps: float
    state: str = "raw"
    drop_reason: Optional[str] = None
    endpoint_embeddings: Optional[tuple[Embedding, Embedding]] = None
    mean_embedding: Optional[Embedding] = None
    clip_id: str = ""

    def __post_init__(self):
        if not self.clip_id:
            object.__setattr__(
                self,
                "clip_id",
                clip_id_for(self.source_id, self.start_frame, self.end_frame),
            )

    @property
    def frame_span(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def duration_seconds(self) -> float:
        return self.frame_span / self.fps

    @property
    def endpoint_distance(self) -> Optional[float]:
        if self.endpoint_embeddings is None:
            return None
        a, b = self.endpoint_embeddings
        return a.distance(b)


@dataclass(frozen=True)
class CaptionCandidate:
    """One teacher's caption for a clip, with input provenance."""

    clip_id: str
    teacher_id: str
    text: str
    inputs_used: frozenset[str] = frozenset({"vision"})


@dataclass(frozen=True)
class ScoredCaption:
    candidate: CaptionCandidate
    matching_score: float


@dataclass(frozen=True)
class GoodnessMatrix:
    """Boolean videos x models table from an every-good-caption study."""

    video_ids: tuple[str, ...]
    model_ids: tuple[str, ...]
    cells: np.ndarray  # shape (V, M), bool

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.video_ids), len(self.model_ids)


@dataclass(frozen=True)
class Lease:
    annotator_id: str
    expiry_time: float


@dataclass(frozen=True)
class AnnotationTask:
    """One unit of human work: a clip page with captions in display order.

    caption_order lists original candidate indices in the order shown to
    the annotator (a slice of a seeded shuffle for paged studies).
    """

    task_id: str
    clip_id: str
    mode: str
    caption_order: tuple[int, ...]
    page_size: int
    lease: Optional[Lease] = None


@dataclass(frozen=True)
class AnnotationResult:
    """A submitted annotation, with selections in original-index space.

    selection is ALL_BAD, a single original index (best_caption), or a
    tuple of original indices (every_good).
    """

    task_id: str
    annotator_id: str
    selection: Any


@dataclass(frozen=True)
class Violation:
    field_path: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return f"{self.field_path}: {self.message}"


def _finite(x) -> bool:
    try:
        return math.isfinite(float(x))
    except (TypeError, ValueError):
        return False


def _validate_source_video(v: SourceVideo) -> list[Violation]:
    out = []
    if v.frame_count < 1:
        out.append(Violation("frame_count", "must be >= 1"))
    if not _finite(v.fps) or v.fps <= 0:
        out.append(Violation("fps", "must be > 0"))
    duration = v.frame_count / v.fps if _finite(v.fps) and v.fps > 0 else None
    for i, sub in enumerate(v.subtitles):
        path = f"subtitles[{i}]"
        if sub.start_time > sub.end_time:
            out.append(Violation(path, "start_time > end_time"))
        if sub.start_time < 0:
            out.append(Violation(path, "start_time < 0"))
        if duration is not None and sub.end_time > duration + 1e-9:
            out.append(Violation(path, "end_time beyond video duration"))
    return out


def _validate_keyframe(k: Keyframe, source: Optional[SourceVideo]) -> list[Violation]:
    out = []
    if k.frame_index < 0:
        out.append(Violation("frame_index", "must be >= 0"))
    if source is not None and k.frame_index >= source.frame_count:
        out.append(Violation("frame_index", "beyond source frame_count"))
    if k.pixels.ndim != 3 or k.pixels.shape[2] != 3:
        out.append(Violation("pixels", "expected H x W x 3 array"))
    return out


def _validate_embedding(e: Embedding, dimension: Optional[int]) -> list[Violation]:
    out = []
    if not np.all(np.isfinite(e.vector)):
        out.append(Violation("vector", "entries must be finite"))
    if dimension is not None and e.vector.shape != (dimension,):
        out.append(Violation("vector", f"length must equal backend dimension {dimension}"))
    return out


def _validate_clip(c: ClipRecord, source: Optional[SourceVideo]) -> list[Violation]:
    out = []
    if c.start_frame < 0:
        out.append(Violation("start_frame", "must be >= 0"))
    if c.start_frame >= c.end_frame:
        out.append(Violation("end_frame", "empty interval: start_frame >= end_frame"))
    if source is not None and c.end_frame > source.frame_count:
        out.append(Violation("end_frame", "beyond source frame_count"))
    if c.state not in CLIP_STATES:
        out.append(Violation("state", f"unknown state {c.state!r}"))
    if c.state == "dropped" and not c.drop_reason:
        out.append(Violation("drop_reason", "dropped clips must carry a reason"))
    if c.state != "dropped" and c.drop_reason:
        out.append(Violation("drop_reason", "only dropped clips carry a reason"))
    if c.state == "kept":
        dur = c.duration_seconds
        if not (1.6 - 1e-9 <= dur <= 60.0 + 1e-9):
            out.append(Violation("end_frame", "kept clip duration outside [1.6s, 60s]"))
    if c.clip_id != clip_id_for(c.source_id, c.start_frame, c.end_frame):
        out.append(Violation("clip_id", "not derived from (source_id, start, end)"))
    return out


def _validate_candidate(c: CaptionCandidate) -> list[Violation]:
    out = []
    if not c.text.strip():
        out.append(Violation("text", "caption text is empty"))
    if not c.inputs_used:
        out.append(Violation("inputs_used", "must name at least one input"))
    for kind in c.inputs_used:
        if kind not in INPUT_KINDS:
            out.append(Violation("inputs_used", f"unknown input kind {kind!r}"))
    return out


def _validate_scored(s: ScoredCaption) -> list[Violation]:
    out = _validate_candidate(s.candidate)
    if not _finite(s.matching_score):
        out.append(Violation("matching_score", "must be finite"))
    return out


def _validate_matrix(m: GoodnessMatrix) -> list[Violation]:
    out = []
    v, mm = m.shape
    if v < 1:
        out.append(Violation("video_ids", "must be nonempty"))
    if mm < 1:
        out.append(Violation("model_ids", "must be nonempty"))
    if m.cells.shape != (v, mm):
        out.append(Violation("cells", f"shape {m.cells.shape} != ({v}, {mm})"))
    return out


def _validate_task(t: AnnotationTask) -> list[Violation]:
    out = []
    if t.mode not in ANNOTATION_MODES:
        out.append(Violation("mode", f"unknown mode {t.mode!r}"))
    if t.page_size > MAX_CAPTIONS_PER_PAGE:
        out.append(Violation("page_size", f"page_size > {MAX_CAPTIONS_PER_PAGE}"))
    if t.page_size < 1:
        out.append(Violation("page_size", "must be >= 1"))
    if len(set(t.caption_order)) != len(t.caption_order):
        out.append(Violation("caption_order", "contains duplicate indices"))
    if any(i < 0 for i in t.caption_order):
        out.append(Violation("caption_order", "negative candidate index"))
    if len(t.caption_order) > t.page_size:
        out.append(Violation("caption_order", "more captions than page_size"))
    return out


def _validate_result(r: AnnotationResult) -> list[Violation]:
    out = []
    sel = r.selection
    if sel == ALL_BAD:
        return out
    if isinstance(sel, int):
        if sel < 0:
            out.append(Violation("selection", "negative candidate index"))
    elif isinstance(sel, (tuple, list, set, frozenset)):
        vals = list(sel)
        if not vals:
            out.append(Violation("selection", "empty selection without ALL_BAD"))
        if any((not isinstance(i, int)) or i < 0 for i in vals):
            out.append(Violation("selection", "indices must be nonnegative ints"))
        if len(set(vals)) != len(vals):
            out.append(Violation("selection", "duplicate indices"))
    else:
        out.append(Violation("selection", f"unsupported selection {sel!r}"))
    return out


def validate_record(record: Any, *, source: Optional[SourceVideo] = None,
                    dimension: Optional[int] = None) -> list[Violation]:
    """Check a domain record against its invariants.

    Returns every violated invariant with a field path; an empty list means
    the record is well-formed. Context-dependent checks (frame bounds,
    embedding dimension) run only when the context argument is supplied.
    """
    if isinstance(record, SourceVideo):
        return _validate_source_video(record)
    if isinstance(record, Keyframe):
        return _validate_keyframe(record, source)
    if isinstance(record, Embedding):
        return _validate_embedding(record, dimension)
    if isinstance(record, ClipRecord):
        return _validate_clip(record, source)
    if isinstance(record, ScoredCaption):
        return _validate_scored(record)
    if isinstance(record, CaptionCandidate):
        return _validate_candidate(record)
    if isinstance(record, GoodnessMatrix):
        return _validate_matrix(record)
    if isinstance(record, AnnotationTask):
        return _validate_task(record)
    if isinstance(record, AnnotationResult):
        return _validate_result(record)
    raise TypeError(f"no validator for {type(record).__name__}")
