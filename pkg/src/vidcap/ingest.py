"""Frame access over raw containers, external decoders, and synthetic fixtures.

The raw container is a dependency-free test substrate: a fixed little-endian
header (magic, width, height, fps numerator/denominator, frame count)
followed by tightly packed 8-bit RGB frames. Real media is reached only
through the external-decoder adapter so codec stacks stay out of the core.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .model import Keyframe

MAGIC = b"VRF1"
_HEADER = struct.Struct("<4sIIIIQ")  # magic, width, height, fps_num, fps_den, frame_count


class IngestError(Exception):
    """Base error for frame-source problems."""


class UnreadablePathError(IngestError):
    pass


class ZeroFrameError(IngestError):
    pass


class DecodeError(IngestError):
    pass


class FrameIndexError(IngestError, IndexError):
    pass


@dataclass
class FrameSource:
    """Uniform random access to decoded RGB frames of one video."""

    source_id: str
    frame_count: int
    fps: float
    width: int
    height: int
    _read_frame: Callable[[int], np.ndarray] = field(repr=False, default=None)

    def frame_at(self, index: int) -> Keyframe:
        """Decode the frame at a 0-based index; deterministic for raw containers."""
        if not (0 <= index < self.frame_count):
            raise FrameIndexError(
                f"frame index {index} out of range [0, {self.frame_count})"
            )
        pixels = self._read_frame(index)
        return Keyframe(source_id=self.source_id, frame_index=index, pixels=pixels)

    def close(self) -> None:
        pass


class RawContainerSource(FrameSource):
    def __init__(self, path: Union[str, Path]):
        path = Path(path)
        if not path.is_file():
            raise UnreadablePathError(f"cannot read {path}")
        self._fh = path.open("rb")
        header = self._fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DecodeError(f"{path}: truncated header")
        magic, width, height, fps_num, fps_den, frame_count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DecodeError(f"{path}: bad magic {magic!r}")
        if frame_count == 0:
            raise ZeroFrameError(f"{path}: container reports zero frames")
        if fps_den == 0 or fps_num == 0:
            raise DecodeError(f"{path}: invalid fps {fps_num}/{fps_den}")
        self._frame_bytes = width * height * 3
        source_id = _content_id(path)
        super().__init__(
            source_id=source_id,
            frame_count=frame_count,
            fps=fps_num / fps_den,
            width=width,
            height=height,
            _read_frame=self._read,
        )
        self.path = path

    def _read(self, index: int) -> np.ndarray:
        self._fh.seek(_HEADER.size + index * self._frame_bytes)
        raw = self._fh.read(self._frame_bytes)
        if len(raw) != self._frame_bytes:
            raise DecodeError(f"{self.path}: truncated frame {index}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(self.height, self.width, 3)

    def close(self) -> None:
        self._fh.close()


@dataclass(frozen=True)
class ExternalDecoder:
    """Contract for reaching real media: (path, frame index) -> one RGB frame.

    probe returns (frame_count, fps, width, height) for a media path;
    read_frame returns an H x W x 3 uint8 array or raises DecodeError.
    """

    probe: Callable[[str], tuple[int, float, int, int]]
    read_frame: Callable[[str, int], np.ndarray]


def open_source(descriptor: Union[str, Path],
                decoder: Optional[ExternalDecoder] = None) -> FrameSource:
    """Open a frame source; raw containers natively, other media via decoder."""
    path = Path(descriptor)
    if decoder is None:
        return RawContainerSource(path)
    if not path.exists():
        raise UnreadablePathError(f"cannot read {path}")
    try:
        frame_count, fps, width, height = decoder.probe(str(path))
    except IngestError:
        raise
    except Exception as exc:
        raise DecodeError(f"decoder handshake failed for {path}: {exc}") from exc
    if frame_count <= 0:
        raise ZeroFrameError(f"{path}: decoder reports zero frames")

    def read(index: int) -> np.ndarray:
        frame = decoder.read_frame(str(path), index)
        return np.asarray(frame, dtype=np.uint8)

    return FrameSource(
        source_id=_content_id(path),
        frame_count=frame_count,
        fps=fps,
        width=width,
        height=height,
        _read_frame=read,
    )


def _content_id(path: Path) -> str:
    digest = hashlib.sha1()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def keyframe_indices(start_frame: int, end_frame: int, fps: float) -> list[int]:
    """Per-second keyframe schedule for a half-open frame interval.

    One keyframe per whole second of duration, anchored at the interval's
    first frame and stepping by fps; intervals shorter than one second
    yield exactly their first frame.
    """
    if start_frame >= end_frame:
        raise ValueError(f"invalid interval [{start_frame}, {end_frame})")
    duration = (end_frame - start_frame) / fps
    count = max(1, math.floor(duration + 1e-9))
    indices = []
    for k in range(count):
        idx = start_frame + round(k * fps)
        if idx >= end_frame:
            break
        indices.append(idx)
    return indices


def per_second_keyframes(src: FrameSource, start_frame: int,
                         end_frame: int) -> list[Keyframe]:
    if not (0 <= start_frame < end_frame <= src.frame_count):
        raise ValueError(
            f"invalid interval [{start_frame}, {end_frame}) for "
            f"{src.frame_count}-frame source"
        )
    return [src.frame_at(i) for i in keyframe_indices(start_frame, end_frame, src.fps)]


# --- synthetic fixtures ----------------------------------------------------

FillFn = Callable[[int, int, int, int], np.ndarray]  # (frame_in_scene, n, h, w)


@dataclass(frozen=True)
class Scene:
    """One fixture scene: a duration, a fill pattern, and the transition
    into the following scene ("cut", or a fade lasting fade_seconds)."""

    duration_seconds: float
    fill: FillFn
    transition: str = "cut"
    fade_seconds: float = 0.0


def solid(color: tuple[int, int, int]) -> FillFn:
    arr = np.array(color, dtype=np.uint8)

    def fn(i, n, h, w):
        return np.broadcast_to(arr, (h, w, 3)).copy()

    return fn


def temporal_gradient(step: int = 1) -> FillFn:
    """Frame i is uniformly i*step (mod 256) in every channel."""

    def fn(i, n, h, w):
        v = (i * step) % 256
        return np.full((h, w, 3), v, dtype=np.uint8)

    return fn


def split_drift(color_a: tuple[int, int, int], color_b: tuple[int, int, int],
                p_start: float, p_end: float) -> FillFn:
    """Two-color split screen whose boundary drifts linearly over the scene.

    A fraction p of columns (left side) shows color_a, the rest color_b;
    p moves from p_start to p_end so the frame histogram changes smoothly,
    which lets fixtures dial in endpoint-embedding distances.
    """
    a = np.array(color_a, dtype=np.uint8)
    b = np.array(color_b, dtype=np.uint8)

    def fn(i, n, h, w):
        t = i / max(1, n - 1)
        p = p_start + (p_end - p_start) * t
        cols = int(round(p * w))
        frame = np.empty((h, w, 3), dtype=np.uint8)
        frame[:, :cols] = a
        frame[:, cols:] = b
        return frame

    return fn


def checker_noise(seed: int, period: int = 4) -> FillFn:
    """Static pseudo-random blocky texture; identical on every frame."""

    def fn(i, n, h, w):
        rng = np.random.default_rng(seed)
        tile = rng.integers(0, 256, size=(max(1, h // period), max(1, w // period), 3),
                            dtype=np.uint8)
        full = np.kron(tile, np.ones((period, period, 1), dtype=np.uint8))
        return full[:h, :w].astype(np.uint8)

    return fn


def _fade_alpha(j: int, fade_frames: int) -> float:
    # Linear ramp that never reaches exactly 0 or 1 inside the window.
    return (j + 1) / (fade_frames + 1)


def generate_fixture(scenes: list[Scene], path: Union[str, Path], *,
                     fps: int = 30, width: int = 64, height: int = 48) -> Path:
    """Write a deterministic synthetic raw-container video.

    Hard cuts place the next scene's first frame immediately after the
    previous scene; a fade replaces the last fade_seconds of a scene with a
    linear blend toward the next scene's first frame.
    """
    if not scenes:
        raise ValueError("scene list is empty")
    for s in scenes:
        if s.duration_seconds <= 0:
            raise ValueError("scene durations must be > 0")

    frames: list[np.ndarray] = []
    for k, scene in enumerate(scenes):
        n = int(round(scene.duration_seconds * fps))
        scene_frames = [scene.fill(i, n, height, width) for i in range(n)]
        if scene.transition == "fade" and k + 1 < len(scenes):
            fade_frames = min(n, int(round(scene.fade_seconds * fps)))
            nxt = scenes[k + 1]
            n_next = int(round(nxt.duration_seconds * fps))
            target = nxt.fill(0, n_next, height, width).astype(np.float64)
            for j in range(fade_frames):
                pos = n - fade_frames + j
                alpha = _fade_alpha(j, fade_frames)
                base = scene_frames[pos].astype(np.float64)
                blended = (1.0 - alpha) * base + alpha * target
                scene_frames[pos] = np.rint(blended).astype(np.uint8)
        frames.extend(scene_frames)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, width, height, fps, 1, len(frames)))
        for frame in frames:
            fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())
    return path


def fixture_bytes(scenes: list[Scene], **kwargs) -> bytes:
    """In-memory variant of generate_fixture, for tests."""
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".vrf") as tmp:
        generate_fixture(scenes, tmp.name, **kwargs)
        return Path(tmp.name).read_bytes()
