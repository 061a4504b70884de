"""Human annotation studies: task creation, leasing, submission, exports.

Two protocols share the machinery: "every_good" shows a clip's candidate
captions across pages of at most 11 and collects every acceptable one;
"best_caption" shows all candidates once and collects the single most
faithful one. Captions are shuffled per task; submissions arrive as display
positions and are stored against original candidate indices.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import (
    ALL_BAD,
    ANNOTATION_MODES,
    MAX_CAPTIONS_PER_PAGE,
    AnnotationResult,
    AnnotationTask,
    CaptionCandidate,
    GoodnessMatrix,
    Lease,
)

logger = logging.getLogger(__name__)

DEFAULT_LEASE_TTL_SECONDS = 600.0


class AnnotationError(Exception):
    pass


class PoolExhausted(AnnotationError):
    """No leasable task remains for this annotator."""


class StaleLease(AnnotationError):
    """The submitting annotator does not hold a live lease on the task."""


class InvalidSelection(AnnotationError):
    pass


def _shuffled_order(n: int, seed: int, clip_id: str) -> list[int]:
    rng = random.Random(f"{seed}|{clip_id}")
    order = list(range(n))
    rng.shuffle(order)
    return order


def create_tasks(candidates_by_clip: dict[str, list[CaptionCandidate]], mode: str,
                 page_size: int = MAX_CAPTIONS_PER_PAGE,
                 shuffle_seed: int = 0) -> list[AnnotationTask]:
    """Build tasks for one study.

    every_good splits each clip's shuffled captions into pages of at most
    page_size (the same clip appears once per page); best_caption emits one
    task per clip with every candidate.
    """
    if mode not in ANNOTATION_MODES:
        raise AnnotationError(f"unknown mode {mode!r}")
    if page_size > MAX_CAPTIONS_PER_PAGE:
        raise AnnotationError(f"page_size {page_size} > {MAX_CAPTIONS_PER_PAGE}")
    if page_size < 1:
        raise AnnotationError("page_size must be >= 1")

    tasks = []
    for clip_id, candidates in candidates_by_clip.items():
        if not candidates:
            raise AnnotationError(f"clip {clip_id} has no candidates")
        order = _shuffled_order(len(candidates), shuffle_seed, clip_id)
        if mode == "best_caption":
            pages = [order]
        else:
            pages = [order[i:i + page_size] for i in range(0, len(order), page_size)]
        for page_idx, page in enumerate(pages):
            tasks.append(AnnotationTask(
                task_id=f"{clip_id}:{mode}:{page_idx}",
                clip_id=clip_id,
                mode=mode,
                caption_order=tuple(page),
                page_size=page_size if mode == "every_good" else max(len(page), 1),
            ))
    return tasks


def positions_to_original(task: AnnotationTask, positions: list[int]) -> list[int]:
    out = []
    for pos in positions:
        if not (0 <= pos < len(task.caption_order)):
            raise InvalidSelection(
                f"position {pos} out of range for task {task.task_id}"
            )
        out.append(task.caption_order[pos])
    return out


class TaskPool:
    """Serialized task store; leasing is the only mutable contention point.

    A task completes after annotators_per_task distinct submissions, which
    lets agreement studies route the same task to several annotators while
    preserving single-lease exclusivity at any instant.
    """

    def __init__(self, tasks: list[AnnotationTask], annotators_per_task: int = 1,
                 lease_ttl_seconds: float = DEFAULT_LEASE_TTL_SECONDS,
                 clock: Callable[[], float] = time.time):
        self._tasks = {t.task_id: t for t in tasks}
        self._order = [t.task_id for t in tasks]
        self._leases: dict[str, Lease] = {}
        self._results: dict[tuple[str, str], AnnotationResult] = {}
        self.annotators_per_task = annotators_per_task
        self.lease_ttl_seconds = lease_ttl_seconds
        self._clock = clock
        self._lock = threading.Lock()

    def task(self, task_id: str) -> AnnotationTask:
        if task_id not in self._tasks:
            raise AnnotationError(f"unknown task {task_id}")
        return self._tasks[task_id]

    def tasks(self) -> list[AnnotationTask]:
        return [self._tasks[tid] for tid in self._order]

    def _submissions(self, task_id: str) -> int:
        return sum(1 for (tid, _a) in self._results if tid == task_id)

    def _lease_active(self, task_id: str, now: float) -> Optional[Lease]:
        lease = self._leases.get(task_id)
        if lease is not None and lease.expiry_time > now:
            return lease
        return None

    def lease(self, annotator_id: str,
              ttl_seconds: Optional[float] = None) -> AnnotationTask:
        """Exclusively lease the next available task for an annotator.

        Re-leasing while already holding a live lease returns the same task.
        """
        ttl = ttl_seconds if ttl_seconds is not None else self.lease_ttl_seconds
        with self._lock:
            now = self._clock()
            for task_id in self._order:
                lease = self._lease_active(task_id, now)
                if lease is not None and lease.annotator_id == annotator_id:
                    return self._with_lease(task_id, lease)
            for task_id in self._order:
                if (task_id, annotator_id) in self._results:
                    continue
                if self._submissions(task_id) >= self.annotators_per_task:
                    continue
                if self._lease_active(task_id, now) is not None:
                    continue
                lease = Lease(annotator_id=annotator_id, expiry_time=now + ttl)
                self._leases[task_id] = lease
                return self._with_lease(task_id, lease)
        raise PoolExhausted(f"no leasable task for annotator {annotator_id}")

    def _with_lease(self, task_id: str, lease: Lease) -> AnnotationTask:
        task = self._tasks[task_id]
        return AnnotationTask(task_id=task.task_id, clip_id=task.clip_id,
                              mode=task.mode, caption_order=task.caption_order,
                              page_size=task.page_size, lease=lease)

    def submit(self, task_id: str, annotator_id: str,
               positions: Optional[list[int]] = None,
               all_bad: bool = False) -> AnnotationResult:
        """Record a submission given display positions (or All Bad).

        Stored selections are original candidate indices. Idempotent per
        (task_id, annotator_id): a duplicate submit returns the first result.
        """
        with self._lock:
            task = self.task(task_id)
            key = (task_id, annotator_id)
            if key in self._results:
                return self._results[key]
            now = self._clock()
            lease = self._lease_active(task_id, now)
            if lease is None or lease.annotator_id != annotator_id:
                raise StaleLease(f"annotator {annotator_id} holds no live lease on {task_id}")
            selection = self._validate_selection(task, positions, all_bad)
            result = AnnotationResult(task_id=task_id, annotator_id=annotator_id,
                                      selection=selection)
            self._results[key] = result
            del self._leases[task_id]
            return result

    def _validate_selection(self, task: AnnotationTask,
                            positions: Optional[list[int]], all_bad: bool):
        has_positions = bool(positions)
        if all_bad and has_positions:
            raise InvalidSelection("selections and All Bad are mutually exclusive")
        if all_bad:
            return ALL_BAD
        if not has_positions:
            raise InvalidSelection("empty selection requires the All Bad option")
        original = positions_to_original(task, list(positions))
        if len(set(original)) != len(original):
            raise InvalidSelection("duplicate positions")
        if task.mode == "best_caption":
            if len(original) != 1:
                raise InvalidSelection("best_caption takes exactly one selection")
            return original[0]
        return tuple(sorted(original))

    def restore(self, result: AnnotationResult) -> None:
        """Replay a previously stored result (service restart path)."""
        with self._lock:
            self._results[(result.task_id, result.annotator_id)] = result

    def results(self) -> list[AnnotationResult]:
        with self._lock:
            return [self._results[k] for k in sorted(self._results)]

    def progress(self, annotator_id: str) -> dict[str, int]:
        with self._lock:
            done = sum(1 for (_t, a) in self._results if a == annotator_id)
            total_results = len(self._results)
            return {
                "submitted": done,
                "tasks": len(self._tasks),
                "total_submissions": total_results,
            }


# --- study post-processing ---------------------------------------------------


@dataclass(frozen=True)
class RetrievalRecord:
    clip_id: str
    positive: str
    hard_negatives: tuple[str, ...]


@dataclass(frozen=True)
class RetrievalSplit:
    train: tuple[RetrievalRecord, ...]
    val: tuple[RetrievalRecord, ...]


def export_retrieval_dataset(results: list[AnnotationResult],
                             tasks_by_id: dict[str, AnnotationTask],
                             candidates_by_clip: dict[str, list[CaptionCandidate]],
                             train_fraction: float = 0.8,
                             seed: int = 0) -> RetrievalSplit:
    """Turn best-caption results into a contrastive retrieval dataset.

    All-Bad clips are filtered out; every remaining record pairs the chosen
    caption with the clip's other candidates as hard negatives. The split is
    a seeded shuffle, so it is reproducible for a given fraction and seed.
    """
    per_clip: dict[str, AnnotationResult] = {}
    for result in results:
        task = tasks_by_id.get(result.task_id)
        if task is None or task.mode != "best_caption":
            continue
        per_clip.setdefault(task.clip_id, result)

    records = []
    for clip_id in sorted(per_clip):
        result = per_clip[clip_id]
        if result.selection == ALL_BAD:
            continue
        candidates = candidates_by_clip[clip_id]
        chosen = result.selection
        records.append(RetrievalRecord(
            clip_id=clip_id,
            positive=candidates[chosen].text,
            hard_negatives=tuple(c.text for i, c in enumerate(candidates) if i != chosen),
        ))
    if not records:
        raise AnnotationError("no records remain after All-Bad filtering")

    rng = random.Random(seed)
    shuffled = list(records)
    rng.shuffle(shuffled)
    n_train = int(len(shuffled) * train_fraction)
    return RetrievalSplit(train=tuple(shuffled[:n_train]), val=tuple(shuffled[n_train:]))


def _best_caption_choices(results: list[AnnotationResult],
                          tasks_by_id: dict[str, AnnotationTask]) -> dict[str, dict[str, object]]:
    """annotator -> clip -> selection (original index or ALL_BAD)."""
    out: dict[str, dict[str, object]] = {}
    for result in results:
        task = tasks_by_id.get(result.task_id)
        if task is None or task.mode != "best_caption":
            continue
        out.setdefault(result.annotator_id, {})[task.clip_id] = result.selection
    return out


def agreement_r1(results: list[AnnotationResult],
                 tasks_by_id: dict[str, AnnotationTask]) -> float:
    """Fraction of shared clips with identical best-caption choices,
    averaged over annotator pairs."""
    choices = _best_caption_choices(results, tasks_by_id)
    annotators = sorted(choices)
    pair_scores = []
    for i in range(len(annotators)):
        for j in range(i + 1, len(annotators)):
            a, b = choices[annotators[i]], choices[annotators[j]]
            shared = sorted(set(a) & set(b))
            if not shared:
                continue
            agree = sum(1 for c in shared if a[c] == b[c])
            pair_scores.append(agree / len(shared))
    if not pair_scores:
        raise AnnotationError("no annotator pair shares any clip")
    return sum(pair_scores) / len(pair_scores)


def union_r1(model_choices: dict[str, int], results: list[AnnotationResult],
             tasks_by_id: dict[str, AnnotationTask]) -> float:
    """Fraction of clips where the model choice matches any annotator's."""
    choices = _best_caption_choices(results, tasks_by_id)
    union: dict[str, set[int]] = {}
    for per_clip in choices.values():
        for clip_id, sel in per_clip.items():
            if sel != ALL_BAD:
                union.setdefault(clip_id, set()).add(sel)
    shared = sorted(set(model_choices) & set(union))
    if not shared:
        raise AnnotationError("model choices share no clips with the results")
    hits = sum(1 for c in shared if model_choices[c] in union[c])
    return hits / len(shared)


@dataclass(frozen=True)
class GoodnessReport:
    matrix: GoodnessMatrix
    model_good_rates: dict[str, float]
    all_bad_rate: float


def goodness_matrix(results: list[AnnotationResult],
                    tasks_by_id: dict[str, AnnotationTask],
                    candidates_by_clip: dict[str, list[CaptionCandidate]]) -> GoodnessReport:
    """Aggregate every-good results into a videos x models boolean table.

    A cell is true when any annotator marked that model's caption good for
    that clip. Rows with no good marks define the All-Bad rate.
    """
    marks: dict[str, set[str]] = {}
    covered_clips: set[str] = set()
    for result in results:
        task = tasks_by_id.get(result.task_id)
        if task is None or task.mode != "every_good":
            continue
        covered_clips.add(task.clip_id)
        if result.selection == ALL_BAD:
            continue
        candidates = candidates_by_clip[task.clip_id]
        for idx in result.selection:
            marks.setdefault(task.clip_id, set()).add(candidates[idx].teacher_id)
    if not covered_clips:
        raise AnnotationError("no every_good results to aggregate")

    video_ids = tuple(sorted(covered_clips))
    model_order: list[str] = []
    for clip_id in video_ids:
        for candidate in candidates_by_clip[clip_id]:
            if candidate.teacher_id not in model_order:
                model_order.append(candidate.teacher_id)
    model_ids = tuple(model_order)
    cells = np.zeros((len(video_ids), len(model_ids)), dtype=bool)
    for vi, clip_id in enumerate(video_ids):
        for mi, model_id in enumerate(model_ids):
            cells[vi, mi] = model_id in marks.get(clip_id, set())
    matrix = GoodnessMatrix(video_ids=video_ids, model_ids=model_ids, cells=cells)
    rates = {mid: float(cells[:, mi].mean()) for mi, mid in enumerate(model_ids)}
    all_bad = float((~cells.any(axis=1)).mean())
    return GoodnessReport(matrix=matrix, model_good_rates=rates, all_bad_rate=all_bad)
