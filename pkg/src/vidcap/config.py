"""Pipeline configuration: one TOML file, env-var overrides, effective dump.

Threshold defaults match the production values baked into SplitterConfig.
Every key can be overridden for CI via environment variables with the
VIDCAP_ prefix and double-underscore nesting (VIDCAP_SPLITTER__TRIM_FRACTION).
"""

from __future__ import annotations

import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from .backends import BackendDescriptor, RetryPolicy
from .fanout import TeacherSpec
from .splitter import SplitterConfig

ENV_PREFIX = "VIDCAP_"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    splitter: SplitterConfig = field(default_factory=SplitterConfig)
    score_threshold: float = 0.43
    teacher_pick_k: int = 8
    workers: int = 0  # 0 = available cores
    seed: int = 0
    backends: tuple[BackendDescriptor, ...] = ()
    roster: tuple[TeacherSpec, ...] = ()
    embed_backend_id: str = "embed-hist"
    score_backend_id: str = "score-cosine"

    def __post_init__(self):
        ids = [b.backend_id for b in self.backends]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate backend_id in backends")
        by_id = {b.backend_id: b for b in self.backends}
        if self.backends:
            if self.embed_backend_id not in by_id:
                raise ConfigError(f"unknown embed backend {self.embed_backend_id!r}")
            if by_id[self.embed_backend_id].role != "embed":
                raise ConfigError("embed_backend_id must name an embed-role backend")
            if self.score_backend_id not in by_id:
                raise ConfigError(f"unknown score backend {self.score_backend_id!r}")
            if by_id[self.score_backend_id].role != "score":
                raise ConfigError("score_backend_id must name a score-role backend")
            for spec in self.roster:
                backend = by_id.get(spec.backend_id)
                if backend is None:
                    raise ConfigError(f"roster teacher {spec.teacher_id} names "
                                      f"unknown backend {spec.backend_id!r}")
                if backend.role != "caption":
                    raise ConfigError(f"roster teacher {spec.teacher_id} must use a "
                                      f"caption-role backend")
        if not (0 < self.score_threshold < 1):
            raise ConfigError("score_threshold must lie in (0, 1)")
        if self.teacher_pick_k < 1:
            raise ConfigError("teacher_pick_k must be >= 1")

    def backend(self, backend_id: str) -> BackendDescriptor:
        for b in self.backends:
            if b.backend_id == backend_id:
                return b
        raise ConfigError(f"unknown backend {backend_id!r}")

    def to_payload(self) -> dict:
        """Canonical dict for hashing and the effective-config dump."""
        payload = {
            "splitter": asdict(self.splitter),
            "score_threshold": self.score_threshold,
            "teacher_pick_k": self.teacher_pick_k,
            "seed": self.seed,
            "embed_backend_id": self.embed_backend_id,
            "score_backend_id": self.score_backend_id,
            "backends": [asdict(b) for b in self.backends],
            "roster": [asdict(t) for t in self.roster],
        }
        return payload

    def dump_effective(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=2)


def default_mock_config(seed: int = 0) -> PipelineConfig:
    """Self-contained configuration: mock backends and an 8-teacher roster
    spanning video/image teachers with every input combination."""
    retry = RetryPolicy(max_attempts=3, backoff_base_seconds=0.1)
    backends = [
        BackendDescriptor(backend_id="embed-hist", role="embed",
                          endpoint="mock:histogram", dimension=64, retry=retry),
        BackendDescriptor(backend_id="score-cosine", role="score",
                          endpoint="mock:cosine", retry=retry),
    ]
    roster = []
    teacher_plan = [
        ("video-vqa-1", "video", False, False),
        ("video-vqa-1-tuned", "video", True, True),
        ("video-vqa-2", "video", True, False),
        ("video-text-chat", "video", True, True),
        ("image-cap-small", "image", False, False),
        ("image-cap-large", "image", False, False),
        ("image-cap-alt", "image", False, False),
        ("image-vqa", "image", True, True),
    ]
    for i, (tid, kind, subs, meta) in enumerate(teacher_plan):
        backend_id = f"cap-{tid}"
        backends.append(BackendDescriptor(
            backend_id=backend_id, role="caption",
            endpoint=f"mock:echo?salt={i}", retry=retry,
        ))
        roster.append(TeacherSpec(teacher_id=tid, backend_id=backend_id, kind=kind,
                                  use_subtitles=subs, use_metadata=meta))
    return PipelineConfig(backends=tuple(backends), roster=tuple(roster), seed=seed)


def _apply_env_overrides(data: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override non-table key {part!r} from {key}")
        leaf = path[-1]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[leaf] = value
    return data


def _parse_retry(data: dict) -> RetryPolicy:
    return RetryPolicy(
        max_attempts=int(data.get("max_attempts", 3)),
        backoff_base_seconds=float(data.get("backoff_base_seconds", 0.5)),
    )


def load_config(path: Union[str, Path], environ=None) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")
    data = _apply_env_overrides(data, environ)

    try:
        splitter = SplitterConfig(**data.get("splitter", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [splitter] section: {exc}")

    backends = []
    for raw in data.get("backends", []):
        raw = dict(raw)
        retry = _parse_retry(raw.pop("retry", {}))
        try:
            backends.append(BackendDescriptor(retry=retry, **raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid backend entry: {exc}")

    roster = []
    for raw in data.get("roster", []):
        try:
            roster.append(TeacherSpec(**raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid roster entry: {exc}")

    run = data.get("run", {})
    selection = data.get("selection", {})
    pick = data.get("teacher_pick", {})
    try:
        return PipelineConfig(
            splitter=splitter,
            score_threshold=float(selection.get("score_threshold", 0.43)),
            teacher_pick_k=int(pick.get("k", 8)),
            workers=int(run.get("workers", 0)),
            seed=int(run.get("seed", 0)),
            backends=tuple(backends),
            roster=tuple(roster),
            embed_backend_id=run.get("embed_backend_id",
                                     selection.get("embed_backend_id", "embed-hist")),
            score_backend_id=selection.get("score_backend_id", "score-cosine"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}")


def write_default_config(path: Union[str, Path]) -> None:
    """Emit a commented starter config using the mock backends."""
    cfg = default_mock_config()
    lines = [
        "# Pipeline configuration. Threshold defaults are the production values;",
        "# override any key here or via VIDCAP_SECTION__KEY environment variables.",
        "",
        "[splitter]",
    ]
    for key, value in asdict(cfg.splitter).items():
        lines.append(f"{key} = {json.dumps(value)}")
    lines += [
        "",
        "[selection]",
        f"score_threshold = {cfg.score_threshold}",
        f'score_backend_id = "{cfg.score_backend_id}"',
        "",
        "[teacher_pick]",
        f"k = {cfg.teacher_pick_k}",
        "",
        "[run]",
        f"workers = {cfg.workers}",
        f"seed = {cfg.seed}",
        f'embed_backend_id = "{cfg.embed_backend_id}"',
    ]
    for backend in cfg.backends:
        lines += ["", "[[backends]]"]
        for key, value in asdict(backend).items():
            if key == "retry":
                continue
            if value is None:
                continue
            lines.append(f"{key} = {json.dumps(value)}")
        retry = backend.retry
        lines.append(f"retry = {{ max_attempts = {retry.max_attempts}, "
                     f"backoff_base_seconds = {retry.backoff_base_seconds} }}")
    for spec in cfg.roster:
        lines += ["", "[[roster]]"]
        for key, value in asdict(spec).items():
            lines.append(f"{key} = {json.dumps(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
