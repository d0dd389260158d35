"""Batch-averaged attention from one role position to the rest of the prompt."""

from __future__ import annotations

import numpy as np

from ..errors import InterventionError
from ..model import forward
from .results import AttentionProfile

POOLED = "–"


def _columns(role_positions: dict, query: int) -> list[tuple[str, tuple[int, ...]]]:
    owner: dict[int, str] = {}
    for role, positions in role_positions.items():
        if role == "last":
            continue
        for i in positions:
            owner[i] = role
    if query not in owner:
        owner[query] = "last"
    columns: list[tuple[str, tuple[int, ...]]] = []
    gap: list[int] = []
    for i in range(query + 1):
        if i in owner:
            if gap:
                columns.append((POOLED, tuple(gap)))
                gap = []
            columns.append((owner[i], (i,)))
        else:
            gap.append(i)
    return columns


def attention_profile(bundle, instances, query_role: str = "p", *, batch_size: int = 16) -> AttentionProfile:
    """Mean attention weight from ``query_role``'s position to each key column, per head.

    Key positions between terms are averaged into one pooled column per gap.
    For roles that occur more than once the last occurrence is the query.
    """
    if not instances:
        raise InterventionError("attention profile needs at least one instance")
    first = instances[0]
    if query_role not in first.role_positions:
        raise InterventionError(f"unknown role {query_role!r}")
    layout = {k: first.positions(k) for k in first.role_positions}
    for inst in instances:
        if {k: inst.positions(k) for k in inst.role_positions} != layout:
            raise InterventionError("instances do not share one template layout")
    query = layout[query_role][-1]
    columns = _columns(layout, query)
    cfg = bundle.config
    tokens = np.array([inst.tokens for inst in instances], dtype=np.int64)
    weights = np.empty((cfg.n_layers, cfg.n_heads, len(columns), len(instances)), dtype=np.float64)
    for start in range(0, len(instances), batch_size):
        cache = forward(bundle, tokens[start : start + batch_size], record=("pattern",), last_only=True)
        for l in range(cfg.n_layers):
            row = cache["pattern", l][:, :, query, :].astype(np.float64)  # (B, H, N_key)
            for c, (_, positions) in enumerate(columns):
                weights[l, :, c, start : start + row.shape[0]] = row[:, :, list(positions)].mean(axis=-1).T
    return AttentionProfile(query_role=query_role, columns=columns, weights=weights)
