"""Sequence likelihood scoring and candidate text selection."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

_PROB_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """One decoding step: a probability vector over the vocabulary."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("step distribution must be a non-empty vector")
        if np.any(arr < 0.0) or np.any(~np.isfinite(arr)):
            raise ValueError("step probabilities must be finite and >= 0")
        if abs(float(arr.sum()) - 1.0) > _PROB_SUM_TOL:
            raise ValueError(f"step probabilities sum to {float(arr.sum())}, not 1")
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return self.probs.size


def sequence_nll(steps: Sequence[StepDistribution], target: Sequence[int]) -> float:
    """Negative log-likelihood of a target id sequence: -sum(ln P(y_i)).

    Natural log, summed (not averaged) over steps; the empty sequence scores
    0.0 and any zero-probability target token makes the whole score +inf.
    """
    if len(steps) != len(target):
        raise ValueError(f"{len(steps)} steps paired with {len(target)} target ids")
    probs = []
    for i, (step, token_id) in enumerate(zip(steps, target)):
        if not 0 <= token_id < len(step):
            raise ValueError(
                f"step {i}: target id {token_id} outside vocab of {len(step)}"
            )
        probs.append(float(step.probs[token_id]))
    if any(p == 0.0 for p in probs):
        return math.inf
    return -sum(math.log(p) for p in probs)


def _token_counts(text: str) -> Counter:
    return Counter(text.casefold().split())


def text_similarity(a: str, b: str) -> float:
    """Cosine similarity of casefolded whitespace-token count vectors.

    Either side tokenizing to nothing gives 0.0; equal count vectors give
    exactly 1.0.
    """
    ca, cb = _token_counts(a), _token_counts(b)
    if not ca or not cb:
        return 0.0
    if ca == cb:
        return 1.0
    dot = sum(n * cb[t] for t, n in ca.items())
    na2 = sum(n * n for n in ca.values())
    nb2 = sum(n * n for n in cb.values())
    return dot / math.sqrt(na2 * nb2)


def select_best(candidates: Sequence[tuple[str, Union[float, None]]]) -> int:
    """Pick the candidate index with the highest score, first on ties.

    When any candidate lacks a score, scores are not comparable and the first
    candidate wins outright. Empty input is an error.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    if any(score is None for _, score in candidates):
        return 0
    best = 0
    for i, (_, score) in enumerate(candidates):
        if score > candidates[best][1]:
            best = i
    return best
