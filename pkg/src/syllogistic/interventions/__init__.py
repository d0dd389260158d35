"""Patching sweeps, path patching and attention profiles over prompt pairs."""

from .attention import POOLED, attention_profile
from .results import AttentionProfile, SweepResult
from .sweeps import (
    VALUE_ROLES,
    PairBatch,
    PathPatchResult,
    head_output_sweep,
    head_pattern_sweep,
    head_value_sweep,
    path_patch,
    path_patch_senders,
    path_patched_logits,
    residual_sweep,
    role_value_sweeps,
    run_cells,
)

__all__ = [
    "POOLED",
    "VALUE_ROLES",
    "AttentionProfile",
    "PairBatch",
    "PathPatchResult",
    "SweepResult",
    "attention_profile",
    "head_output_sweep",
    "head_pattern_sweep",
    "head_value_sweep",
    "path_patch",
    "path_patch_senders",
    "path_patched_logits",
    "residual_sweep",
    "role_value_sweeps",
    "run_cells",
]
