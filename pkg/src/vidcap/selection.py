"""Best-caption selection via matching scores, plus gate and rate reports."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from typing import Iterable, Optional

from .backends import BackendError, ScoreBackend
from .model import CaptionCandidate, Keyframe, ScoredCaption

logger = logging.getLogger(__name__)

STRONG_SCORE_THRESHOLD = 0.43


class ScoreUnavailable(Exception):
    """The score backend failed for every candidate; the clip is parked."""


def select_best(frames: list[Keyframe], candidates: list[CaptionCandidate],
                score_backend: ScoreBackend,
                max_workers: Optional[int] = None) -> tuple[ScoredCaption, list[ScoredCaption]]:
    """Score every candidate and pick the argmax.

    Ties break toward the lowest roster index so the choice is
    deterministic and independent of caption content.
    """
    if not candidates:
        raise ValueError("no candidates to select from")

    def score(candidate: CaptionCandidate) -> float:
        return score_backend.match_score(frames, candidate.text)

    workers = max_workers or len(candidates)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(score, c) for c in candidates]
        scored: list[ScoredCaption] = []
        errors: list[str] = []
        for candidate, future in zip(candidates, futures):
            try:
                scored.append(ScoredCaption(candidate=candidate,
                                            matching_score=future.result()))
            except BackendError as exc:
                errors.append(f"{candidate.teacher_id}: {exc}")
    if not scored:
        raise ScoreUnavailable("; ".join(errors))
    best_idx = max(range(len(scored)), key=lambda i: (scored[i].matching_score, -i))
    return scored[best_idx], scored


def gate(scored: ScoredCaption, threshold: float = STRONG_SCORE_THRESHOLD) -> str:
    """"strong" iff the matching score strictly exceeds the threshold."""
    return "strong" if scored.matching_score > threshold else "weak"


def selective_rates(chosen_teachers: Iterable[str]) -> dict[str, float]:
    """Fraction of clips won by each teacher; fractions sum to 1."""
    counts = Counter(chosen_teachers)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no selection records")
    return {teacher: count / total for teacher, count in sorted(counts.items())}


def strong_fraction(scores: Iterable[float],
                    threshold: float = STRONG_SCORE_THRESHOLD) -> float:
    values = list(scores)
    if not values:
        raise ValueError("no scored records")
    strong = sum(1 for s in values if s > threshold)
    return strong / len(values)
