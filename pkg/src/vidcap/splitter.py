"""Two-stage semantics-aware splitting of long videos into coherent clips.

Stage 1 cuts on shot boundaries (HSV content score) and inserts artificial
cuts every few seconds so long takes and slow transitions are not missed.
Stage 2 filters clips whose endpoint embeddings drift too far apart,
re-stitches adjacent clips with matching boundary embeddings, and applies
duration, motion, dedup, and trim post-processing in a fixed order.

Baseline splitters (subtitle alignment, shots only) and the max running
perceptual distance metric support side-by-side comparisons.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .backends import EmbeddingBackend, histogram_embedding
from .ingest import FrameSource, per_second_keyframes
from .model import ClipRecord, Keyframe, SourceVideo, mean_embedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitterConfig:
    cutscene_threshold: float = 25.0
    min_scene_len_frames: int = 15
    artificial_cut_seconds: float = 5.0
    consistency_max: float = 1.0
    stitch_max: float = 0.6
    motion_min: float = 0.15
    dedup_min: float = 0.3
    min_clip_seconds: float = 2.0
    max_clip_seconds: float = 60.0
    trim_fraction: float = 0.1

    def __post_init__(self):
        numeric = (
            self.cutscene_threshold, self.min_scene_len_frames,
            self.artificial_cut_seconds, self.consistency_max, self.stitch_max,
            self.motion_min, self.dedup_min, self.min_clip_seconds,
            self.max_clip_seconds, self.trim_fraction,
        )
        if any(v < 0 for v in numeric):
            raise ValueError("splitter thresholds must be >= 0")
        if not self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be < 0.5")
        if not self.min_clip_seconds < self.max_clip_seconds:
            raise ValueError("min_clip_seconds must be < max_clip_seconds")


def rgb_to_hsv255(pixels: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV with every channel scaled to [0, 255]."""
    rgb = np.asarray(pixels, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc

    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0) * 255.0

    h = np.zeros_like(maxc)
    nz = delta > 0
    safe = np.where(nz, delta, 1.0)
    r_max = nz & (maxc == r)
    g_max = nz & (maxc == g) & ~r_max
    b_max = nz & ~r_max & ~g_max
    h = np.where(r_max, ((g - b) / safe) % 6.0, h)
    h = np.where(g_max, (b - r) / safe + 2.0, h)
    h = np.where(b_max, (r - g) / safe + 4.0, h)
    h = h * 60.0 * (255.0 / 360.0)
    return np.stack([h, s, v], axis=-1)


def content_score(prev: Keyframe, nxt: Keyframe) -> float:
    """Mean over pixels of the average absolute HSV difference, in [0, 255]."""
    if prev.pixels.shape != nxt.pixels.shape:
        raise ValueError(
            f"frame dimensions differ: {prev.pixels.shape} vs {nxt.pixels.shape}"
        )
    a = rgb_to_hsv255(prev.pixels)
    b = rgb_to_hsv255(nxt.pixels)
    return float(np.abs(a - b).mean())


def detect_shots(src: FrameSource, cfg: SplitterConfig) -> list[ClipRecord]:
    """Partition [0, frame_count) at content-score shot boundaries."""
    if src.frame_count < 1:
        raise ValueError("source has no frames")
    cuts = []
    last_cut = 0
    prev = src.frame_at(0)
    for i in range(1, src.frame_count):
        cur = src.frame_at(i)
        score = content_score(prev, cur)
        if score > cfg.cutscene_threshold and (i - last_cut) >= cfg.min_scene_len_frames:
            cuts.append(i)
            last_cut = i
        prev = cur
    bounds = [0] + cuts + [src.frame_count]
    return [
        ClipRecord(source_id=src.source_id, start_frame=a, end_frame=b,
                   fps=src.fps, state="shot")
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


def artificial_cuts(clips: list[ClipRecord], cfg: SplitterConfig) -> list[ClipRecord]:
    """Recursively slice off a fixed-length head from every over-long clip."""
    out = []
    for clip in clips:
        head = max(1, round(cfg.artificial_cut_seconds * clip.fps))
        start, end = clip.start_frame, clip.end_frame
        while end - start > head:
            out.append(replace(clip, start_frame=start, end_frame=start + head,
                               state="cut5s", clip_id=""))
            start += head
        out.append(replace(clip, start_frame=start, end_frame=end,
                           state="cut5s", clip_id=""))
    return out


def endpoint_frame_indices(clip: ClipRecord) -> tuple[int, int]:
    """Clip-relative endpoint sample positions: floor(0.1 n) and floor(0.9 n)."""
    n = clip.frame_span
    a = min(max(math.floor(0.1 * n), 0), n - 1)
    b = min(max(math.floor(0.9 * n), 0), n - 1)
    return a, b


def attach_endpoint_embeddings(clip: ClipRecord, src: FrameSource,
                               embed: EmbeddingBackend) -> ClipRecord:
    rel_a, rel_b = endpoint_frame_indices(clip)
    try:
        e_a = embed.embed_frame(src.frame_at(clip.start_frame + rel_a))
        e_b = embed.embed_frame(src.frame_at(clip.start_frame + rel_b))
    except Exception as exc:
        raise RuntimeError(f"embedding failed for clip {clip.clip_id}") from exc
    return replace(clip, endpoint_embeddings=(e_a, e_b),
                   mean_embedding=mean_embedding(e_a, e_b))


def consistency_filter(clips: list[ClipRecord], cfg: SplitterConfig) -> list[ClipRecord]:
    """Keep clips whose endpoint embeddings stay within consistency_max."""
    out = []
    for clip in clips:
        if clip.state == "dropped":
            out.append(clip)
            continue
        if clip.endpoint_embeddings is None:
            raise ValueError(f"clip {clip.clip_id} is missing endpoint embeddings")
        if clip.endpoint_distance <= cfg.consistency_max:
            out.append(replace(clip, state="filtered"))
        else:
            out.append(replace(clip, state="dropped", drop_reason="transition"))
    return out


def stitch(clips: list[ClipRecord], cfg: SplitterConfig, src: FrameSource,
           embed: EmbeddingBackend) -> list[ClipRecord]:
    """Greedy left-to-right chain merge of adjacent look-alike clips.

    After a merge the right endpoint embedding is re-extracted at 0.9 of the
    merged span, so the next boundary comparison reflects the merged clip.
    """
    ordered = sorted(clips, key=lambda c: c.start_frame)
    alive = [c for c in ordered if c.state != "dropped"]
    dropped = [c for c in ordered if c.state == "dropped"]
    out: list[ClipRecord] = []
    cur: Optional[ClipRecord] = None
    for clip in alive:
        if cur is None:
            cur = clip
            continue
        contiguous = cur.end_frame == clip.start_frame
        if contiguous and cur.endpoint_embeddings and clip.endpoint_embeddings:
            boundary = cur.endpoint_embeddings[1].distance(clip.endpoint_embeddings[0])
            if boundary <= cfg.stitch_max:
                merged = replace(cur, end_frame=clip.end_frame, clip_id="")
                rel = min(math.floor(0.9 * merged.frame_span), merged.frame_span - 1)
                e_b = embed.embed_frame(src.frame_at(merged.start_frame + rel))
                e_a = cur.endpoint_embeddings[0]
                cur = replace(merged, endpoint_embeddings=(e_a, e_b),
                              mean_embedding=mean_embedding(e_a, e_b))
                continue
        out.append(cur)
        cur = clip
    if cur is not None:
        out.append(cur)
    out = [replace(c, state="stitched") for c in out]
    return sorted(out + dropped, key=lambda c: c.start_frame)


def postprocess(clips: list[ClipRecord], cfg: SplitterConfig) -> list[ClipRecord]:
    """Final quality/diversity pass, applied strictly in this order:
    short-clip drop, motionless drop, head truncation, per-source dedup,
    and endpoint trim. Only surviving clips end in state "kept".
    """
    ordered = sorted(clips, key=lambda c: c.start_frame)
    passthrough = [c for c in ordered if c.state == "dropped"]
    survivors: list[ClipRecord] = []
    for clip in ordered:
        if clip.state == "dropped":
            continue
        if clip.duration_seconds < cfg.min_clip_seconds:
            passthrough.append(replace(clip, state="dropped", drop_reason="too_short"))
            continue
        if clip.endpoint_distance is not None and clip.endpoint_distance <= cfg.motion_min:
            passthrough.append(replace(clip, state="dropped", drop_reason="motionless"))
            continue
        if clip.duration_seconds > cfg.max_clip_seconds:
            new_end = clip.start_frame + round(cfg.max_clip_seconds * clip.fps)
            clip = replace(clip, end_frame=new_end, clip_id="")
        survivors.append(clip)

    kept: list[ClipRecord] = []
    for clip in survivors:
        if clip.mean_embedding is not None:
            # Dedup scope is the same source video only.
            duplicate = any(
                prev.source_id == clip.source_id
                and prev.mean_embedding is not None
                and clip.mean_embedding.distance(prev.mean_embedding) <= cfg.dedup_min
                for prev in kept
            )
            if duplicate:
                passthrough.append(replace(clip, state="dropped", drop_reason="duplicate"))
                continue
        kept.append(clip)

    final = []
    for clip in kept:
        t = math.floor(clip.frame_span * cfg.trim_fraction)
        final.append(replace(clip, start_frame=clip.start_frame + t,
                             end_frame=clip.end_frame - t, state="kept", clip_id=""))
    return sorted(final + passthrough, key=lambda c: c.start_frame)


def split_source(src: FrameSource, cfg: SplitterConfig,
                 embed: EmbeddingBackend) -> list[ClipRecord]:
    """Run the full two-stage splitter on one source.

    Returns every clip record, kept and dropped, ordered by start frame;
    re-running with the same source and config yields identical clip_ids.
    """
    clips = detect_shots(src, cfg)
    clips = artificial_cuts(clips, cfg)
    clips = [attach_endpoint_embeddings(c, src, embed) for c in clips]
    clips = consistency_filter(clips, cfg)
    clips = stitch(clips, cfg, src, embed)
    return postprocess(clips, cfg)


def kept_clips(records: list[ClipRecord]) -> list[ClipRecord]:
    return [c for c in records if c.state == "kept"]


DistanceFn = Callable[[Keyframe, Keyframe], float]


def histogram_frame_distance(a: Keyframe, b: Keyframe) -> float:
    """Euclidean distance between normalized color histograms; the
    deterministic stand-in for a learned perceptual distance."""
    ha = histogram_embedding(a.pixels, 64)
    hb = histogram_embedding(b.pixels, 64)
    return float(np.linalg.norm(ha - hb))


def max_running_distance(src: FrameSource, clip: ClipRecord,
                         distance_fn: DistanceFn = histogram_frame_distance) -> float:
    """Largest perceptual distance between consecutive per-second keyframes.

    Zero for clips with a single keyframe (no consecutive pair exists).
    """
    frames = per_second_keyframes(src, clip.start_frame, clip.end_frame)
    if len(frames) < 2:
        return 0.0
    return max(distance_fn(a, b) for a, b in zip(frames[:-1], frames[1:]))


def baseline_split(src: FrameSource, cfg: SplitterConfig,
                   strategy: str, meta: Optional[SourceVideo] = None) -> list[ClipRecord]:
    """Comparison splitters: subtitle sentence alignment, or raw shots."""
    if strategy == "shots_only":
        return detect_shots(src, cfg)
    if strategy == "subtitle_align":
        if meta is None or not meta.subtitles:
            raise ValueError("subtitle_align requires a video with subtitles")
        out = []
        for sub in meta.subtitles:
            start = max(0, round(sub.start_time * src.fps))
            end = min(src.frame_count, round(sub.end_time * src.fps))
            if end > start:
                out.append(ClipRecord(source_id=src.source_id, start_frame=start,
                                      end_frame=end, fps=src.fps, state="shot"))
        return out
    raise ValueError(f"unknown baseline strategy {strategy!r}")
