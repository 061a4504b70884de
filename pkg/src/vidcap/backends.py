"""Typed clients for the three external model roles: embed, caption, score.

Backends are reached over a small JSON wire protocol; deterministic mock
variants (endpoint "mock:<variant>") back every test. Each client enforces
its own in-flight cap and retries with exponential backoff, reusing a stable
request_id across attempts so retries are idempotent.
"""

from __future__ import annotations

import base64
import logging
import threading
import time
import urllib.parse
import uuid
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import CaptionCandidate, Embedding, Keyframe

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

ROLES = ("embed", "caption", "score")


class BackendError(Exception):
    """Base failure talking to a backend."""


class BackendTimeout(BackendError):
    pass


class ProtocolError(BackendError):
    """Malformed or non-conforming response body."""


class ContractViolation(BackendError):
    """Response violates the backend's declared contract (e.g. dimension)."""


class EmptyCaption(BackendError):
    """Teacher produced empty text; recorded as a teacher failure."""


class BackendUnavailable(BackendError):
    """All retry attempts exhausted."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_seconds: float = 0.5


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    role: str
    endpoint: str
    dimension: Optional[int] = None
    timeout_seconds: float = 120.0
    max_in_flight: int = 4
    retry: RetryPolicy = RetryPolicy()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown backend role {self.role!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.role == "embed" and (self.dimension is None or self.dimension < 1):
            raise ValueError("embed backends must declare dimension >= 1")


def encode_frame(pixels: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()).decode("ascii")


def decode_frame(data: str, width: int, height: int) -> np.ndarray:
    raw = base64.b64decode(data)
    expected = width * height * 3
    if len(raw) != expected:
        raise ProtocolError(f"frame payload {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


# --- transports -------------------------------------------------------------


class Transport:
    """Sends one request body and returns the response body."""

    def send(self, kind: str, body: dict, timeout: float) -> dict:
        raise NotImplementedError


class HttpTransport(Transport):
    """POSTs JSON to {base}/{embed|caption|score}; GET {base}/health."""

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def send(self, kind: str, body: dict, timeout: float) -> dict:
        import requests

        url = f"{self.base_url}/{kind}"
        try:
            if kind == "health":
                resp = requests.get(url, timeout=timeout)
            else:
                resp = requests.post(url, json=body, timeout=timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise BackendUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise ProtocolError(f"{url} returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{url}: non-JSON body") from exc


# Color vocabulary for the mock caption/score pair: both sides derive the
# same label word from frame content, so captions and matching scores agree
# without any side channel.
_PALETTE = {
    "black": (0, 0, 0),
    "white": (255, 255, 255),
    "gray": (128, 128, 128),
    "red": (220, 40, 40),
    "green": (40, 200, 40),
    "blue": (40, 40, 220),
    "yellow": (220, 220, 40),
    "cyan": (40, 220, 220),
    "magenta": (220, 40, 220),
}

_ECHO_TEMPLATES = (
    "a {color} scene",
    "the video shows a {color} pattern",
    "footage of a {color} texture",
    "a {color} image",
    "view of a {color} surface",
    "a clip dominated by {color} tones",
    "a mostly {color} shot",
    "a {color} field in motion",
)


def color_label(frame: np.ndarray) -> str:
    mean = frame.reshape(-1, 3).mean(axis=0)
    best, best_d = None, None
    for name, rgb in _PALETTE.items():
        d = float(np.linalg.norm(mean - np.asarray(rgb, dtype=np.float64)))
        if best_d is None or d < best_d:
            best, best_d = name, d
    return best


def _tokens(text: str) -> set[str]:
    return {t for t in "".join(c.lower() if c.isalnum() else " " for c in text).split() if t}


def token_cosine(a: str, b: str) -> float:
    ta, tb = _tokens(a), _tokens(b)
    if not ta or not tb:
        return 0.0
    inter = len(ta & tb)
    return inter / (len(ta) ** 0.5 * len(tb) ** 0.5)


def histogram_embedding(pixels: np.ndarray, dimension: int) -> np.ndarray:
    """4x4x4 RGB color histogram, L2-normalized, padded/truncated to dimension."""
    px = np.asarray(pixels, dtype=np.uint8).reshape(-1, 3)
    bins = (px // 64).astype(np.int64)
    flat = bins[:, 0] * 16 + bins[:, 1] * 4 + bins[:, 2]
    hist = np.bincount(flat, minlength=64).astype(np.float64)
    norm = np.linalg.norm(hist)
    if norm > 0:
        hist /= norm
    if dimension <= 64:
        return hist[:dimension]
    return np.pad(hist, (0, dimension - 64))


class MockTransport(Transport):
    """Pure-function backends for tests, with concurrency instrumentation.

    Variants: "histogram" (embed), "echo" (caption; optional ?salt=N picks a
    sentence template), "cosine" (score). Tracks the maximum number of
    simultaneous in-flight requests and asserts that retried request bodies
    are byte-identical per request_id.
    """

    def __init__(self, variant: str, dimension: Optional[int] = None):
        name, _, query = variant.partition("?")
        self.variant = name
        params = dict(urllib.parse.parse_qsl(query))
        self.salt = int(params.get("salt", 0))
        self.dimension = dimension
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self.calls = 0
        self._bodies: dict[str, str] = {}
        self.fail_next = 0  # raise BackendTimeout for this many sends
        self.delay_seconds = 0.0  # hold requests in flight, for concurrency tests

    def send(self, kind: str, body: dict, timeout: float) -> dict:
        with self._lock:
            self.in_flight += 1
            self.calls += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            if kind != "health":
                rid = body["request_id"]
                fingerprint = repr(sorted(body.items()))
                seen = self._bodies.get(rid)
                if seen is not None and seen != fingerprint:
                    raise AssertionError(f"retry of {rid} altered the request body")
                self._bodies[rid] = fingerprint
            should_fail = self.fail_next > 0
            if should_fail:
                self.fail_next -= 1
        try:
            if self.delay_seconds:
                time.sleep(self.delay_seconds)
            if should_fail:
                raise BackendTimeout("injected timeout")
            return self._dispatch(kind, body)
        finally:
            with self._lock:
                self.in_flight -= 1

    def _dispatch(self, kind: str, body: dict) -> dict:
        if kind == "health":
            return {"v": PROTOCOL_VERSION, "status": "ok"}
        if kind == "embed":
            frame = decode_frame(body["pixels"], body["width"], body["height"])
            vec = histogram_embedding(frame, self.dimension or 64)
            return {"v": PROTOCOL_VERSION, "vector": vec.tolist()}
        if kind == "caption" and self.variant == "empty":
            # Degenerate teacher: always returns empty text.
            return {"v": PROTOCOL_VERSION, "text": ""}
        frames = [decode_frame(f, body["width"], body["height"]) for f in body["frames"]]
        label = color_label(frames[0])
        if kind == "caption":
            template = _ECHO_TEMPLATES[self.salt % len(_ECHO_TEMPLATES)]
            text = template.format(color=label)
            extra = _prompt_keywords(body.get("prompt", ""))
            if extra:
                text = f"{text}, {extra}"
            return {"v": PROTOCOL_VERSION, "text": text}
        if kind == "score":
            score = token_cosine(body["caption"], label)
            return {"v": PROTOCOL_VERSION, "score": score}
        raise ProtocolError(f"mock transport cannot handle {kind!r}")


def _prompt_keywords(prompt: str) -> str:
    """Echo back the informative lines of a structured prompt."""
    parts = []
    for line in prompt.splitlines():
        for prefix in ("Video title:", "Video description:", "Video subtitles:"):
            if line.startswith(prefix):
                value = line[len(prefix):].strip()
                if value:
                    parts.append(value)
    return " ".join(parts)


def make_transport(descriptor: BackendDescriptor) -> Transport:
    if descriptor.endpoint.startswith("mock:"):
        return MockTransport(descriptor.endpoint[len("mock:"):],
                             dimension=descriptor.dimension)
    return HttpTransport(descriptor.endpoint)


# --- clients ----------------------------------------------------------------


@dataclass(frozen=True)
class HealthStatus:
    backend_id: str
    status: str  # healthy | unreachable | incompatible
    latency_seconds: Optional[float] = None
    protocol_version: Optional[int] = None


class BackendClient:
    """Shareable handle for one backend; callers may invoke from any worker."""

    def __init__(self, descriptor: BackendDescriptor,
                 transport: Optional[Transport] = None,
                 sleep=time.sleep):
        self.descriptor = descriptor
        self.transport = transport if transport is not None else make_transport(descriptor)
        self._semaphore = threading.BoundedSemaphore(descriptor.max_in_flight)
        self._sleep = sleep

    @property
    def backend_id(self) -> str:
        return self.descriptor.backend_id

    def _call(self, kind: str, body: dict) -> dict:
        body = dict(body)
        body["v"] = PROTOCOL_VERSION
        body.setdefault("request_id", uuid.uuid4().hex)
        policy = self.descriptor.retry
        last: Optional[BackendError] = None
        with self._semaphore:
            for attempt in range(policy.max_attempts):
                try:
                    return self.transport.send(kind, body, self.descriptor.timeout_seconds)
                except (BackendTimeout, BackendUnavailable) as exc:
                    last = exc
                    if attempt + 1 < policy.max_attempts:
                        delay = policy.backoff_base_seconds * (2 ** attempt)
                        logger.debug("backend %s attempt %d failed (%s); retrying in %.2fs",
                                     self.backend_id, attempt + 1, exc, delay)
                        self._sleep(delay)
        raise BackendUnavailable(
            f"backend {self.backend_id}: {policy.max_attempts} attempts failed: {last}"
        )

    def health_check(self) -> HealthStatus:
        start = time.monotonic()
        try:
            resp = self.transport.send("health", {}, self.descriptor.timeout_seconds)
        except BackendError:
            return HealthStatus(self.backend_id, "unreachable")
        latency = time.monotonic() - start
        version = resp.get("v")
        if version != PROTOCOL_VERSION:
            return HealthStatus(self.backend_id, "incompatible",
                                latency_seconds=latency, protocol_version=version)
        return HealthStatus(self.backend_id, "healthy",
                            latency_seconds=latency, protocol_version=version)


class EmbeddingBackend(BackendClient):
    def embed_frame(self, keyframe: Keyframe, request_id: Optional[str] = None) -> Embedding:
        px = keyframe.pixels
        body = {
            "width": int(px.shape[1]),
            "height": int(px.shape[0]),
            "pixels": encode_frame(px),
        }
        if request_id:
            body["request_id"] = request_id
        resp = self._call("embed", body)
        vector = resp.get("vector")
        if not isinstance(vector, list):
            raise ProtocolError(f"backend {self.backend_id}: missing vector")
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.descriptor.dimension,):
            raise ContractViolation(
                f"backend {self.backend_id}: vector length {arr.shape[0]} != "
                f"declared dimension {self.descriptor.dimension}"
            )
        if not np.all(np.isfinite(arr)):
            raise ContractViolation(f"backend {self.backend_id}: non-finite vector")
        return Embedding(vector=arr, backend_id=self.backend_id)


class CaptionBackend(BackendClient):
    def caption_clip(self, clip_id: str, frames: list[Keyframe], prompt: str,
                     inputs_used: frozenset[str],
                     request_id: Optional[str] = None) -> CaptionCandidate:
        if not frames:
            raise ValueError("caption payload must carry at least one frame")
        px = frames[0].pixels
        body = {
            "width": int(px.shape[1]),
            "height": int(px.shape[0]),
            "frames": [encode_frame(f.pixels) for f in frames],
            "prompt": prompt,
        }
        if request_id:
            body["request_id"] = request_id
        resp = self._call("caption", body)
        text = resp.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"backend {self.backend_id}: missing text")
        if not text.strip():
            raise EmptyCaption(f"backend {self.backend_id}: empty caption")
        return CaptionCandidate(clip_id=clip_id, teacher_id=self.backend_id,
                                text=text.strip(), inputs_used=inputs_used)


class ScoreBackend(BackendClient):
    def match_score(self, frames: list[Keyframe], caption: str,
                    request_id: Optional[str] = None) -> float:
        if not frames:
            raise ValueError("score payload must carry at least one frame")
        px = frames[0].pixels
        body = {
            "width": int(px.shape[1]),
            "height": int(px.shape[0]),
            "frames": [encode_frame(f.pixels) for f in frames],
            "caption": caption,
        }
        if request_id:
            body["request_id"] = request_id
        resp = self._call("score", body)
        score = resp.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise ProtocolError(f"backend {self.backend_id}: non-numeric score")
        value = float(score)
        if not np.isfinite(value):
            raise ProtocolError(f"backend {self.backend_id}: non-finite score")
        return value


_CLIENT_TYPES = {
    "embed": EmbeddingBackend,
    "caption": CaptionBackend,
    "score": ScoreBackend,
}


def make_client(descriptor: BackendDescriptor,
                transport: Optional[Transport] = None,
                sleep=time.sleep) -> BackendClient:
    return _CLIENT_TYPES[descriptor.role](descriptor, transport=transport, sleep=sleep)
