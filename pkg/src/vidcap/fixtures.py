"""Synthetic fixture corpus: deterministic videos that exercise every
splitter path (hard cuts, fades, static scenes, rapid cuts, long takes,
near-duplicates) at desk scale.

Drift scenes are two-color split screens whose boundary moves over the
scene; the drift range is calibrated so a whole merged scene lands inside
the keeper window of endpoint-embedding distance under the histogram mock,
while fades land far outside it. Adjacent scenes always use disjoint color
pairs so re-stitching never bridges a real content change.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .ingest import Scene, generate_fixture, open_source, solid, split_drift
from .model import SourceVideo, Subtitle

DEFAULT_FPS = 12
DEFAULT_SIZE = (64, 48)

# Three disjoint color pairs; adjacent scenes cycle pairs so their
# histograms never share a bin.
COLOR_PAIRS = [
    ((200, 40, 40), (40, 200, 40)),    # red / green
    ((40, 40, 220), (220, 220, 40)),   # blue / yellow
    ((40, 220, 220), (220, 40, 220)),  # cyan / magenta
]

GRAY = (128, 128, 128)

# Boundary fractions for drift scenes. A full scene's 10%..90% window then
# spans a histogram distance of roughly 0.86 (fast) or 0.46 (slow): inside
# the (0.15, 1.0] keeper window with margin on both sides.
FAST_DRIFT = (0.85, 0.25)
SLOW_DRIFT = (0.70, 0.40)

_TITLES = [
    "garden tour", "city walk", "river crossing", "workshop day",
    "mountain trail", "harbor views", "studio session", "market morning",
]
_SUBTITLE_WORDS = [
    "we start here", "look at this part", "now it changes",
    "almost done now", "one more thing", "that is all",
]


@dataclass
class VideoRecipe:
    name: str
    scenes: list[Scene]
    kind: str
    fps: int = DEFAULT_FPS
    fade_windows: list[tuple[int, int]] = field(default_factory=list)  # frame ranges
    title: Optional[str] = None
    description: Optional[str] = None

    @property
    def total_frames(self) -> int:
        return sum(int(round(s.duration_seconds * self.fps)) for s in self.scenes)


def _drift(pair_idx: int, duration: float, drift=FAST_DRIFT,
           reverse: bool = False, transition: str = "cut",
           fade_seconds: float = 0.0) -> Scene:
    a, b = COLOR_PAIRS[pair_idx % len(COLOR_PAIRS)]
    p0, p1 = drift
    if reverse:
        p0, p1 = p1, p0
    return Scene(duration, split_drift(a, b, p0, p1), transition=transition,
                 fade_seconds=fade_seconds)


def _rapid_block(pair_idx: int, count: int, scene_seconds: float = 1.5) -> list[Scene]:
    a, b = COLOR_PAIRS[pair_idx % len(COLOR_PAIRS)]
    return [Scene(scene_seconds, solid(a if i % 2 == 0 else b)) for i in range(count)]


def _recipe(index: int, rng: random.Random) -> VideoRecipe:
    kind = ("cuts", "fades", "rapid", "longtake", "static", "mixed")[index % 6]
    fps = DEFAULT_FPS
    jitter = rng.choice([0.0, 0.25, 0.5])

    if kind == "cuts":
        # Two distinct takes plus an exact repeat of the first: the repeat
        # dedups away.
        d1, d2 = 8.0 + jitter, 6.0 + jitter
        scenes = [_drift(0, d1), _drift(1, d2), _drift(0, d1)]
        return VideoRecipe(f"v{index:03d}_cuts", scenes, kind, fps)

    if kind == "fades":
        d = 6.0 + jitter
        scenes = [
            _drift(0, d, transition="fade", fade_seconds=1.0),
            _drift(1, d, transition="fade", fade_seconds=1.0),
            _drift(2, d),
        ]
        f1 = int(round((d - 1.0) * fps)), int(round(d * fps))
        f2 = int(round((2 * d - 1.0) * fps)), int(round(2 * d * fps))
        return VideoRecipe(f"v{index:03d}_fades", scenes, kind, fps,
                           fade_windows=[f1, f2])

    if kind == "rapid":
        scenes = [_drift(2, 5.0 + jitter)]
        scenes += _rapid_block(0, count=8)
        scenes += [_drift(1, 5.0 + jitter)]
        return VideoRecipe(f"v{index:03d}_rapid", scenes, kind, fps)

    if kind == "longtake":
        duration = rng.choice([66.0, 70.0, 75.0])
        scenes = [_drift(index % 3, duration, drift=SLOW_DRIFT)]
        return VideoRecipe(f"v{index:03d}_longtake", scenes, kind, fps)

    if kind == "static":
        scenes = [Scene(10.0 + jitter, solid(GRAY))]
        return VideoRecipe(f"v{index:03d}_static", scenes, kind, fps)

    # mixed: rapid block framed by drifts, with one fade
    d = 6.0 + jitter
    scenes = [_drift(1, d)]
    scenes += _rapid_block(2, count=6)
    scenes += [_drift(0, d, transition="fade", fade_seconds=1.0), _drift(1, d)]
    # The fade occupies the final second of the third drift scene.
    fade_end = int(round((2 * d + 6 * 1.5) * fps))
    fade_start = fade_end - fps
    return VideoRecipe(f"v{index:03d}_mixed", scenes, kind, fps,
                       fade_windows=[(fade_start, fade_end)])


def _subtitles_for(recipe: VideoRecipe, rng: random.Random) -> list[Subtitle]:
    duration = recipe.total_frames / recipe.fps
    # Three evenly spaced sentence windows; they intentionally straddle
    # scene boundaries so subtitle-aligned baseline clips cross cuts.
    bounds = [0.0, duration / 3, 2 * duration / 3, duration]
    subs = []
    for i in range(3):
        text = _SUBTITLE_WORDS[(rng.randrange(len(_SUBTITLE_WORDS)) + i)
                               % len(_SUBTITLE_WORDS)]
        subs.append(Subtitle(round(bounds[i], 3), round(bounds[i + 1], 3), text))
    return subs


@dataclass
class CorpusEntry:
    path: str
    name: str
    kind: str
    fps: int
    frame_count: int
    fade_windows: list[tuple[int, int]]


def build_corpus(directory: Union[str, Path], count: int = 54,
                 seed: int = 0) -> list[CorpusEntry]:
    """Write a deterministic corpus of fixture videos with metadata sidecars.

    Each video gets a .vrf container plus a .json sidecar carrying title,
    description, and subtitles; corpus.json records per-video ground truth
    (scene kinds, fade windows) for verification.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    entries = []
    for i in range(count):
        recipe = _recipe(i, rng)
        path = directory / f"{recipe.name}.vrf"
        width, height = DEFAULT_SIZE
        generate_fixture(recipe.scenes, path, fps=recipe.fps,
                         width=width, height=height)
        title = _TITLES[i % len(_TITLES)]
        sidecar = {
            "title": f"{title} {i:03d}",
            "description": f"{recipe.kind} fixture from the synthetic corpus",
            "subtitles": [[s.start_time, s.end_time, s.text]
                          for s in _subtitles_for(recipe, rng)],
        }
        path.with_suffix(".json").write_text(
            json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
        entries.append(CorpusEntry(
            path=str(path), name=recipe.name, kind=recipe.kind, fps=recipe.fps,
            frame_count=recipe.total_frames, fade_windows=recipe.fade_windows,
        ))
    meta = [e.__dict__ for e in entries]
    (directory / "corpus.json").write_text(json.dumps(meta, indent=2) + "\n",
                                           encoding="utf-8")
    return entries


def load_corpus_meta(directory: Union[str, Path]) -> list[CorpusEntry]:
    data = json.loads((Path(directory) / "corpus.json").read_text(encoding="utf-8"))
    return [CorpusEntry(**{**item, "fade_windows": [tuple(w) for w in item["fade_windows"]]})
            for item in data]


def load_sidecar(video_path: Union[str, Path], source_id: str,
                 frame_count: int, fps: float) -> SourceVideo:
    """Build SourceVideo metadata from a container's .json sidecar."""
    sidecar_path = Path(video_path).with_suffix(".json")
    title = description = None
    subtitles: tuple[Subtitle, ...] = ()
    if sidecar_path.exists():
        data = json.loads(sidecar_path.read_text(encoding="utf-8"))
        title = data.get("title")
        description = data.get("description")
        subtitles = tuple(Subtitle(float(s), float(e), str(t))
                          for s, e, t in data.get("subtitles", []))
    return SourceVideo(id=source_id, frame_count=frame_count, fps=fps,
                       title=title, description=description, subtitles=subtitles)


def discover_sources(directory: Union[str, Path]) -> list[Path]:
    """Deterministic source ordering: container files sorted by name."""
    return sorted(Path(directory).glob("*.vrf"))
