"""Activation-patching sweeps and path patching over prompt pairs.

Every sweep works chunk by chunk: one clean and one corrupted run per chunk,
then one intervened run per site that resumes from the unpatched base run.
All runs compute last-position logits only, so baseline and patched logit
differences come out of identical arithmetic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InterventionError
from ..metrics import batch_logit_differences, noising_scores, patching_scores
from ..model import ActivationCache, ModelBundle, PatchSpec, PatchTarget, forward
from .results import DIRECTIONS, SweepResult

VALUE_ROLES = ("all", "p", "m1", "m2")


@dataclass(frozen=True)
class PairBatch:
    """Token arrays and answer ids for a list of position-aligned prompt pairs."""

    clean: np.ndarray
    corrupted: np.ndarray
    answers: np.ndarray
    distractors: np.ndarray
    role_positions: dict
    labels: tuple[str, ...]

    @classmethod
    def from_pairs(cls, pairs: Sequence) -> "PairBatch":
        if not pairs:
            raise InterventionError("no prompt pairs to patch")
        lengths = {len(p.clean.tokens) for p in pairs} | {len(p.corrupted.tokens) for p in pairs}
        if len(lengths) != 1:
            raise InterventionError(f"misaligned pair lengths {sorted(lengths)}; sweeps need one template length")
        first = pairs[0].clean
        roles = {k: first.positions(k) for k in first.role_positions}
        for p in pairs:
            if {k: p.clean.positions(k) for k in p.clean.role_positions} != roles:
                raise InterventionError("pairs do not share role positions; use one scheme per sweep")
        labels = _position_labels(len(first.tokens), roles)
        return cls(
            clean=np.array([p.clean.tokens for p in pairs], dtype=np.int64),
            corrupted=np.array([p.corrupted.tokens for p in pairs], dtype=np.int64),
            answers=np.array([p.answer_token for p in pairs], dtype=np.int64),
            distractors=np.array([p.distractor_token for p in pairs], dtype=np.int64),
            role_positions=roles,
            labels=labels,
        )

    def __len__(self) -> int:
        return self.clean.shape[0]

    def chunk(self, start: int, stop: int) -> "PairBatch":
        return PairBatch(
            self.clean[start:stop],
            self.corrupted[start:stop],
            self.answers[start:stop],
            self.distractors[start:stop],
            self.role_positions,
            self.labels,
        )

    def deltas(self, cache: ActivationCache) -> np.ndarray:
        return batch_logit_differences(cache.final_logits(), self.answers, self.distractors)


def _as_batch(pairs) -> PairBatch:
    return pairs if isinstance(pairs, PairBatch) else PairBatch.from_pairs(pairs)


def _position_labels(n: int, roles: dict) -> tuple[str, ...]:
    labels = [str(i) for i in range(n)]
    for role, positions in roles.items():
        if role == "last":
            continue
        for i in positions:
            labels[i] = f"{i}:[{role}]"
    last = roles["last"][0]
    if "[" not in labels[last]:
        labels[last] = f"{last}:[last]"
    return tuple(labels)


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise InterventionError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _base_and_donor(direction, clean_cache, corrupt_cache):
    return (corrupt_cache, clean_cache) if direction == "denoise" else (clean_cache, corrupt_cache)


def _score(direction, d_clean, d_corrupt, d_patched) -> np.ndarray:
    if direction == "denoise":
        return patching_scores(d_clean, d_corrupt, d_patched)
    return noising_scores(d_clean, d_corrupt, d_patched)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_cells(
    bundle: ModelBundle,
    pairs,
    cells: Sequence[Sequence[PatchTarget]],
    direction: str = "denoise",
    *,
    donor_record: Sequence[str] = (),
    batch_size: int = 16,
    workers: int = 1,
) -> np.ndarray:
    """Per-sample scores ``(len(cells), n_pairs)`` for patching each cell's targets jointly."""
    _check_direction(direction)
    batch = _as_batch(pairs)
    if batch_size < 1:
        raise InterventionError("batch_size must be at least 1")
    # The base run needs what resuming needs; only the donor run keeps donor activations.
    base_record = {"resid_pre", "resid_post"}
    donor_side = {*base_record, *donor_record}
    clean_record, corrupt_record = (
        (donor_side, base_record) if direction == "denoise" else (base_record, donor_side)
    )
    out = np.full((len(cells), len(batch)), np.nan)
    for start in range(0, len(batch), batch_size):
        chunk = batch.chunk(start, start + batch_size)
        clean_cache = forward(bundle, chunk.clean, record=clean_record, last_only=True)
        corrupt_cache = forward(bundle, chunk.corrupted, record=corrupt_record, last_only=True)
        d_clean, d_corrupt = chunk.deltas(clean_cache), chunk.deltas(corrupt_cache)
        base, donor = _base_and_donor(direction, clean_cache, corrupt_cache)

        def patched(targets):
            run = forward(
                bundle, base.tokens, PatchSpec(tuple(targets)), donor=donor, resume=base, record=(), last_only=True
            )
            return chunk.deltas(run)

        for i, d_patched in enumerate(_map(patched, cells, workers)):
            out[i, start : start + len(chunk)] = _score(direction, d_clean, d_corrupt, d_patched)
    return out


def _layer_head_labels(bundle):
    cfg = bundle.config
    return [f"L{l}" for l in range(cfg.n_layers)], [f"H{h}" for h in range(cfg.n_heads)]


def residual_sweep(bundle, pairs, direction="denoise", *, batch_size=16, workers=1) -> SweepResult:
    """Patch ``resid_pre`` at one (layer, position) at a time."""
    batch = _as_batch(pairs)
    L, N = bundle.config.n_layers, batch.clean.shape[1]
    cells = [[PatchTarget("resid_pre", l, positions=(i,))] for l in range(L) for i in range(N)]
    samples = run_cells(bundle, batch, cells, direction, batch_size=batch_size, workers=workers)
    return SweepResult.from_samples(
        samples.reshape(L, N, -1),
        axis="layer_position",
        site="resid_pre",
        direction=direction,
        row_labels=[f"L{l}" for l in range(L)],
        col_labels=list(batch.labels),
        legend=_legend(batch),
    )


def _legend(batch: PairBatch) -> dict:
    return {k: list(v) for k, v in batch.role_positions.items()}


def _head_sweep(bundle, pairs, site, donor_name, direction, positions_for, batch_size, workers, tag=None):
    batch = _as_batch(pairs)
    L, H = bundle.config.n_layers, bundle.config.n_heads
    cells = [[PatchTarget(site, l, h, positions_for(batch))] for l in range(L) for h in range(H)]
    samples = run_cells(
        bundle, batch, cells, direction, donor_record=(donor_name,), batch_size=batch_size, workers=workers
    )
    rows, cols = _layer_head_labels(bundle)
    return SweepResult.from_samples(
        samples.reshape(L, H, -1),
        axis="layer_head",
        site=tag or site,
        direction=direction,
        row_labels=rows,
        col_labels=cols,
        legend=_legend(batch),
    )


def head_output_sweep(bundle, pairs, direction="denoise", *, batch_size=16, workers=1) -> SweepResult:
    """Patch each head's output at all positions."""
    return _head_sweep(bundle, pairs, "head_out", "head_out", direction, lambda b: None, batch_size, workers)


def head_pattern_sweep(bundle, pairs, direction="denoise", *, batch_size=16, workers=1) -> SweepResult:
    """Patch each head's attention pattern at all query positions."""
    return _head_sweep(bundle, pairs, "head_pattern", "pattern", direction, lambda b: None, batch_size, workers)


def _role_positions(role):
    if role == "all":
        return lambda b: None
    return lambda b: tuple(b.role_positions[role])


def head_value_sweep(bundle, pairs, direction="denoise", role="all", *, batch_size=16, workers=1) -> SweepResult:
    """Patch each head's value vectors at all positions, or only at one role's positions."""
    if role not in VALUE_ROLES:
        raise InterventionError(f"role must be one of {VALUE_ROLES}, got {role!r}")
    tag = "head_value" if role == "all" else f"head_value[{role}]"
    return _head_sweep(bundle, pairs, "head_value", "value", direction, _role_positions(role), batch_size, workers, tag)


def role_value_sweeps(bundle, pairs, direction="denoise", *, batch_size=16, workers=1) -> dict[str, SweepResult]:
    """Value-patching sweeps at all positions and at the [p], [m1] and [m2] positions."""
    batch = _as_batch(pairs)
    return {
        role: head_value_sweep(bundle, batch, direction, role, batch_size=batch_size, workers=workers)
        for role in VALUE_ROLES
    }


@dataclass(frozen=True)
class PathPatchResult:
    sender: tuple[int, int]
    receiver: tuple[int, int]
    mean: float
    std: float
    n: int
    samples: np.ndarray


def _path_final(bundle, clean_tokens, clean_cache, corrupt_cache, sender, receiver) -> ActivationCache:
    cfg = bundle.config
    ls, hs = sender
    lr, hr = receiver
    # Pass 2: clean run with every head from the sender's layer on frozen to its
    # clean output, except the sender (corrupted output) and the receiver (recomputed).
    donor = clean_cache.with_replaced("head_out", ls, hs, corrupt_cache)
    frozen = tuple(
        PatchTarget("head_out", l, h)
        for l in range(ls, cfg.n_layers)
        for h in range(cfg.n_heads)
        if (l, h) != (lr, hr)
    )
    pass2 = forward(
        bundle, clean_tokens, PatchSpec(frozen), donor=donor, resume=clean_cache, record=("head_out",), last_only=True
    )
    # Pass 3: clean run with only the receiver's output swapped for its pass-2 value.
    return forward(
        bundle,
        clean_tokens,
        PatchSpec((PatchTarget("head_out", lr, hr),)),
        donor=pass2,
        resume=clean_cache,
        record=(),
        last_only=True,
    )


def _path_scores(bundle, chunk: PairBatch, clean_cache, corrupt_cache, d_clean, d_corrupt, sender, receiver):
    final = _path_final(bundle, chunk.clean, clean_cache, corrupt_cache, sender, receiver)
    return noising_scores(d_clean, d_corrupt, chunk.deltas(final))


def _path_runs(bundle, clean_tokens, corrupted_tokens):
    clean_cache = forward(bundle, clean_tokens, record=("resid_pre", "resid_post", "head_out"), last_only=True)
    corrupt_cache = forward(bundle, corrupted_tokens, record=("head_out",), last_only=True)
    return clean_cache, corrupt_cache


def path_patched_logits(bundle, clean_tokens, corrupted_tokens, sender, receiver) -> np.ndarray:
    """Final-position logits ``(B, V)`` of the scored pass of a path patch."""
    sender, receiver = tuple(sender), tuple(receiver)
    _check_path(bundle, sender, receiver)
    clean_tokens = np.atleast_2d(np.asarray(clean_tokens, dtype=np.int64))
    corrupted_tokens = np.atleast_2d(np.asarray(corrupted_tokens, dtype=np.int64))
    caches = _path_runs(bundle, clean_tokens, corrupted_tokens)
    return _path_final(bundle, clean_tokens, *caches, sender, receiver).final_logits()


def _check_path(bundle, sender, receiver):
    cfg = bundle.config
    for name, (l, h) in (("sender", sender), ("receiver", receiver)):
        if not (0 <= l < cfg.n_layers and 0 <= h < cfg.n_heads):
            raise InterventionError(f"{name} head {l}.{h} out of range")
    if sender[0] >= receiver[0]:
        raise InterventionError(
            f"sender {sender[0]}.{sender[1]} must sit in an earlier layer than receiver {receiver[0]}.{receiver[1]}"
        )


def _path_caches(bundle, chunk: PairBatch):
    clean_cache, corrupt_cache = _path_runs(bundle, chunk.clean, chunk.corrupted)
    return clean_cache, corrupt_cache, chunk.deltas(clean_cache), chunk.deltas(corrupt_cache)


def path_patch(bundle, pairs, sender, receiver, *, batch_size=16) -> PathPatchResult:
    """Noising path patch of the sender -> receiver route.

    The score is a noising score: 0 is no effect and negative values mean the
    sender's clean output, routed through the receiver, supports the answer.
    """
    sender, receiver = tuple(sender), tuple(receiver)
    _check_path(bundle, sender, receiver)
    batch = _as_batch(pairs)
    samples = np.full(len(batch), np.nan)
    for start in range(0, len(batch), batch_size):
        chunk = batch.chunk(start, start + batch_size)
        caches = _path_caches(bundle, chunk)
        samples[start : start + len(chunk)] = _path_scores(bundle, chunk, *caches, sender, receiver)
    finite = samples[np.isfinite(samples)]
    mean = float(finite.mean()) if finite.size else float("nan")
    std = float(finite.std()) if finite.size else float("nan")
    return PathPatchResult(sender, receiver, mean, std, int(finite.size), samples)


def path_patch_senders(bundle, pairs, receiver, *, batch_size=16, workers=1) -> SweepResult:
    """Path-patch every head in layers below the receiver; other cells are NaN."""
    receiver = tuple(receiver)
    if receiver[0] == 0:
        raise InterventionError("a receiver in layer 0 has no senders")
    _check_path(bundle, (0, 0), receiver)
    cfg = bundle.config
    batch = _as_batch(pairs)
    senders = [(l, h) for l in range(receiver[0]) for h in range(cfg.n_heads)]
    samples = np.full((cfg.n_layers, cfg.n_heads, len(batch)), np.nan)
    for start in range(0, len(batch), batch_size):
        chunk = batch.chunk(start, start + batch_size)
        caches = _path_caches(bundle, chunk)

        def score(sender):
            return _path_scores(bundle, chunk, *caches, sender, receiver)

        for (l, h), s in zip(senders, _map(score, senders, workers)):
            samples[l, h, start : start + len(chunk)] = s
    rows, cols = _layer_head_labels(bundle)
    return SweepResult.from_samples(
        samples,
        axis="layer_head",
        site=f"path->{receiver[0]}.{receiver[1]}",
        direction="noise",
        row_labels=rows,
        col_labels=cols,
        legend=_legend(batch),
    )
