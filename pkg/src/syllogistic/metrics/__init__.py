"""Logit difference, accuracy, patching scores and batch statistics."""

from .scores import (
    RunScore,
    Stats,
    accuracy,
    batch_logit_differences,
    batch_stats,
    logit_difference,
    noising_score,
    noising_scores,
    patching_score,
    patching_scores,
)

__all__ = [
    "RunScore",
    "Stats",
    "accuracy",
    "batch_logit_differences",
    "batch_stats",
    "logit_difference",
    "noising_score",
    "noising_scores",
    "patching_score",
    "patching_scores",
]
