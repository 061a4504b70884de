"""Per-clip fan-out to the caption teacher roster.

Image teachers receive one randomly sampled frame from the middle band of
the clip; video teachers receive the per-second keyframes. VQA-style
teachers additionally get a structured prompt carrying metadata and/or
subtitle text; vision-only teachers get the plain one-sentence instruction.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from typing import Optional

from .backends import BackendError, CaptionBackend
from .ingest import FrameSource, per_second_keyframes
from .model import CaptionCandidate, ClipRecord, Keyframe, SourceVideo

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE_RESOURCE = "prompt_template_v1.txt"

# Issued verbatim when a teacher receives no text inputs at all.
DUMMY_PROMPT = "Please faithfully summarize the video (or image) in one sentence."


@dataclass(frozen=True)
class TeacherSpec:
    """One roster entry: which backend to call and which inputs it sees."""

    teacher_id: str
    backend_id: str
    kind: str  # "video" or "image"
    use_subtitles: bool = False
    use_metadata: bool = False

    def __post_init__(self):
        if self.kind not in ("video", "image"):
            raise ValueError(f"teacher kind must be video|image, got {self.kind!r}")


@dataclass(frozen=True)
class PromptTemplate:
    metadata_lines: tuple[str, ...]
    subtitle_lines: tuple[str, ...]
    instruction_lines: tuple[str, ...]

    @classmethod
    def load_default(cls) -> "PromptTemplate":
        text = (
            importlib_resources.files("vidcap.resources")
            .joinpath(PROMPT_TEMPLATE_RESOURCE)
            .read_text(encoding="utf-8")
        )
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> "PromptTemplate":
        sections: dict[str, list[str]] = {"metadata": [], "subtitles": [], "instruction": []}
        current: Optional[list[str]] = None
        for line in text.splitlines():
            stripped = line.strip()
            if stripped.startswith("[") and stripped.endswith("]"):
                name = stripped[1:-1]
                if name not in sections:
                    raise ValueError(f"unknown prompt template section {name!r}")
                current = sections[name]
            elif current is not None and stripped:
                current.append(stripped)
        if not sections["instruction"]:
            raise ValueError("prompt template must define an [instruction] section")
        return cls(
            metadata_lines=tuple(sections["metadata"]),
            subtitle_lines=tuple(sections["subtitles"]),
            instruction_lines=tuple(sections["instruction"]),
        )


_DEFAULT_TEMPLATE: Optional[PromptTemplate] = None


def default_template() -> PromptTemplate:
    global _DEFAULT_TEMPLATE
    if _DEFAULT_TEMPLATE is None:
        _DEFAULT_TEMPLATE = PromptTemplate.load_default()
    return _DEFAULT_TEMPLATE


@dataclass(frozen=True)
class PromptResult:
    text: str
    inputs_used: frozenset[str]
    downgraded: tuple[str, ...] = ()


def clip_subtitle_text(meta: SourceVideo, clip: ClipRecord) -> str:
    """Subtitles overlapping the clip window, concatenated in start order."""
    start_s = clip.start_frame / clip.fps
    end_s = clip.end_frame / clip.fps
    parts = [
        sub.text.strip()
        for sub in sorted(meta.subtitles, key=lambda s: s.start_time)
        if sub.start_time < end_s and sub.end_time > start_s and sub.text.strip()
    ]
    return " ".join(parts)


def build_prompt(meta: SourceVideo, clip: ClipRecord, use_subtitles: bool,
                 use_metadata: bool,
                 template: Optional[PromptTemplate] = None) -> PromptResult:
    """Assemble the teacher prompt for one clip.

    With both flags off this is exactly the plain one-sentence instruction.
    A flagged-but-absent field drops its section and records the downgrade.
    """
    template = template or default_template()
    lines: list[str] = []
    inputs = {"vision"}
    downgraded: list[str] = []

    if use_metadata:
        title = (meta.title or "").strip()
        description = (meta.description or "").strip()
        if title or description:
            inputs.add("metadata")
            for line in template.metadata_lines:
                rendered = line.format(title=title, description=description)
                lines.append(rendered)
        else:
            downgraded.append("metadata")
    if use_subtitles:
        subtitle_text = clip_subtitle_text(meta, clip)
        if subtitle_text:
            inputs.add("subtitles")
            for line in template.subtitle_lines:
                lines.append(line.format(subtitles=subtitle_text))
        else:
            downgraded.append("subtitles")
    lines.extend(template.instruction_lines)
    return PromptResult(text="\n".join(lines), inputs_used=frozenset(inputs),
                        downgraded=tuple(downgraded))


def clip_rng(clip_id: str, salt: str = "") -> random.Random:
    """Reproducible per-clip RNG with no global state."""
    seed = int.from_bytes(
        hashlib.sha256(f"{clip_id}|{salt}".encode("utf-8")).digest()[:8], "big"
    )
    return random.Random(seed)


def sample_image_frame(clip: ClipRecord, rng: random.Random) -> int:
    """Uniform clip-relative frame index in [floor(0.3 N), floor(0.7 N)]."""
    n = clip.frame_span
    if n < 1:
        raise ValueError("clip is empty")
    lo = math.floor(0.3 * n)
    hi = math.floor(0.7 * n)
    hi = min(hi, n - 1)
    return rng.randint(lo, hi)


@dataclass(frozen=True)
class TeacherFailure:
    teacher_id: str
    error: str


@dataclass
class FanoutResult:
    clip_id: str
    candidates: list[CaptionCandidate] = field(default_factory=list)
    failures: list[TeacherFailure] = field(default_factory=list)

    @property
    def parked(self) -> bool:
        return not self.candidates


def fanout(clip: ClipRecord, meta: SourceVideo, src: FrameSource,
           roster: list[TeacherSpec], backends: dict[str, CaptionBackend],
           template: Optional[PromptTemplate] = None,
           max_workers: Optional[int] = None) -> FanoutResult:
    """Invoke every roster teacher for one clip and assemble the candidates.

    Teachers run concurrently (each backend still enforces its own in-flight
    cap); candidates come back in roster order. Individual teacher failures
    are recorded; a clip with zero successes is parked.
    """
    if not roster:
        raise ValueError("teacher roster is empty")
    keyframes = per_second_keyframes(src, clip.start_frame, clip.end_frame)
    rng = clip_rng(clip.clip_id, salt="image-frame")
    sampled = src.frame_at(clip.start_frame + sample_image_frame(clip, rng))

    def invoke(spec: TeacherSpec):
        backend = backends[spec.backend_id]
        prompt = build_prompt(meta, clip, spec.use_subtitles, spec.use_metadata,
                              template=template)
        frames: list[Keyframe] = [sampled] if spec.kind == "image" else keyframes
        candidate = backend.caption_clip(clip.clip_id, frames, prompt.text,
                                         inputs_used=prompt.inputs_used)
        return CaptionCandidate(clip_id=candidate.clip_id, teacher_id=spec.teacher_id,
                                text=candidate.text, inputs_used=candidate.inputs_used)

    result = FanoutResult(clip_id=clip.clip_id)
    workers = max_workers or len(roster)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [(spec, pool.submit(invoke, spec)) for spec in roster]
        for spec, future in futures:
            try:
                result.candidates.append(future.result())
            except BackendError as exc:
                logger.warning("teacher %s failed on clip %s: %s",
                               spec.teacher_id, clip.clip_id, exc)
                result.failures.append(TeacherFailure(spec.teacher_id, str(exc)))
    return result
