"""Scores over final-position logits.

The logit difference is ``logit(answer) - logit(distractor)`` at the last
prompt position. Patching scores normalise a patched run's logit difference
between the corrupted and clean runs of the same sample.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from typing import NamedTuple

import numpy as np

from ..errors import MetricError

DEGENERATE = 1e-9


class RunScore(NamedTuple):
    delta: float

    @property
    def correct(self) -> bool:
        return self.delta > 0


class Stats(NamedTuple):
    mean: float
    std: float
    count: int
    missing: int = 0


def _check_ids(vocab_size: int, *ids) -> None:
    for i in ids:
        if not 0 <= int(i) < vocab_size:
            raise MetricError(f"token id {int(i)} is outside the vocabulary of size {vocab_size}")


def logit_difference(cache, instance, index: int = 0) -> RunScore:
    """Score row ``index`` of ``cache`` against ``instance``'s answer and distractor."""
    if cache.n_tokens != len(instance.tokens):
        raise MetricError("cache and instance have different lengths")
    logits = cache.logits_at(instance.role_positions["last"])[index]
    _check_ids(logits.shape[-1], instance.answer_token, instance.distractor_token)
    return RunScore(float(logits[instance.answer_token]) - float(logits[instance.distractor_token]))


def batch_logit_differences(final_logits: np.ndarray, answers, distractors) -> np.ndarray:
    """Vectorised logit differences for ``(B, V)`` final-position logits, in float64."""
    final_logits = np.asarray(final_logits)
    answers = np.asarray(answers, dtype=np.int64)
    distractors = np.asarray(distractors, dtype=np.int64)
    if final_logits.ndim != 2 or answers.shape != (final_logits.shape[0],) or distractors.shape != answers.shape:
        raise MetricError("expected (B, V) logits with B answer and B distractor ids")
    _check_ids(final_logits.shape[1], *answers, *distractors)
    rows = np.arange(final_logits.shape[0])
    return final_logits[rows, answers].astype(np.float64) - final_logits[rows, distractors].astype(np.float64)


def accuracy(deltas: Iterable[float]) -> float:
    deltas = np.asarray(list(deltas), dtype=np.float64)
    if deltas.size == 0:
        raise MetricError("accuracy of an empty batch")
    return float(np.mean(deltas > 0))


def _clamp(x):
    """Clamp to [-1, 1], keeping the input's number type."""
    if -1 <= x <= 1:
        return x
    return type(x)(1 if x > 0 else -1)


def patching_score(clean, corrupted, patched):
    """``(patched - corrupted) / (clean - corrupted)`` clamped to [-1, 1].

    1 means the patch restored the clean behaviour, 0 means no effect. Returns
    ``None`` when clean and corrupted are closer than 1e-9. Exact for
    ``Fraction`` inputs.
    """
    span = clean - corrupted
    if abs(span) < DEGENERATE:
        return None
    return _clamp((patched - corrupted) / span)


def noising_score(clean, corrupted, patched):
    """``(patched - clean) / (clean - corrupted)`` clamped to [-1, 1].

    For corrupted-into-clean patches: 0 means no effect, -1 means the patch
    fully reproduced the corrupted behaviour, so negative marks a component
    that contributes positively.
    """
    span = clean - corrupted
    if abs(span) < DEGENERATE:
        return None
    return _clamp((patched - clean) / span)


def _normalised(numerator, span) -> np.ndarray:
    ok = np.abs(span) >= DEGENERATE
    out = np.full(span.shape, np.nan)
    np.divide(numerator, span, out=out, where=ok)
    return np.where(ok, np.clip(out, -1.0, 1.0), np.nan)


def _as_arrays(*arrays):
    return np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in arrays))


def patching_scores(clean, corrupted, patched) -> np.ndarray:
    """Array form of :func:`patching_score`; degenerate entries are NaN."""
    clean, corrupted, patched = _as_arrays(clean, corrupted, patched)
    return _normalised(patched - corrupted, clean - corrupted)


def noising_scores(clean, corrupted, patched) -> np.ndarray:
    """Array form of :func:`noising_score`; degenerate entries are NaN."""
    clean, corrupted, patched = _as_arrays(clean, corrupted, patched)
    return _normalised(patched - clean, clean - corrupted)


def batch_stats(scores: Sequence[float | None]) -> Stats:
    """Mean and population std over the finite entries.

    ``None`` and NaN entries are skipped and counted as ``missing``.
    """
    values = list(scores)
    if not values:
        raise MetricError("statistics of an empty batch")
    finite = [float(v) for v in values if v is not None and math.isfinite(float(v))]
    missing = len(values) - len(finite)
    if not finite:
        return Stats(math.nan, math.nan, 0, missing)
    arr = np.asarray(finite, dtype=np.float64)
    return Stats(float(arr.mean()), float(arr.std()), len(finite), missing)
