"""Greedy maximum-coverage selection of a teacher subset.

Given a boolean videos x models goodness table from a human study, pick the
model with the most good captions, then repeatedly pick the model that is
best on the still-uncovered videos. Ties break toward the lowest model
index; once no model adds coverage, remaining slots fill in global
column-sum order so the function is total.
"""

from __future__ import annotations

import numpy as np

from .model import GoodnessMatrix


def greedy_select(matrix: GoodnessMatrix, k: int) -> list[str]:
    v, m = matrix.shape
    if v < 1 or m < 1:
        raise ValueError("matrix must be nonempty")
    if not (1 <= k <= m):
        raise ValueError(f"k must be in [1, {m}], got {k}")
    cells = matrix.cells
    covered = np.zeros(v, dtype=bool)
    remaining = list(range(m))
    picks: list[int] = []

    while len(picks) < k and remaining:
        gains = [int(cells[~covered, j].sum()) for j in remaining]
        best_gain = max(gains)
        if best_gain == 0:
            break
        j = remaining[gains.index(best_gain)]  # index() → lowest model index
        picks.append(j)
        remaining.remove(j)
        covered |= cells[:, j]

    if len(picks) < k:
        # Coverage exhausted early; fill by global column sums, index tie-break.
        totals = [(-int(cells[:, j].sum()), j) for j in remaining]
        for _, j in sorted(totals):
            if len(picks) == k:
                break
            picks.append(j)
    return [matrix.model_ids[j] for j in picks]


def coverage(matrix: GoodnessMatrix, subset: list[str]) -> float:
    """Fraction of videos with at least one good caption among the subset."""
    index = {mid: j for j, mid in enumerate(matrix.model_ids)}
    cols = []
    for mid in subset:
        if mid not in index:
            raise KeyError(f"unknown model id {mid!r}")
        cols.append(index[mid])
    if not cols:
        return 0.0
    covered = matrix.cells[:, cols].any(axis=1)
    return float(covered.mean())


def single_best_rate(matrix: GoodnessMatrix) -> tuple[str, float]:
    v, m = matrix.shape
    if v < 1 or m < 1:
        raise ValueError("matrix must be nonempty")
    means = matrix.cells.mean(axis=0)
    j = int(np.argmax(means))  # argmax returns the first (lowest) index on ties
    return matrix.model_ids[j], float(means[j])


def coverage_curve(matrix: GoodnessMatrix, k: int) -> list[tuple[str, float]]:
    """Per-pick cumulative coverage for the greedy selection."""
    picks = greedy_select(matrix, k)
    return [(picks[i], coverage(matrix, picks[: i + 1])) for i in range(len(picks))]
