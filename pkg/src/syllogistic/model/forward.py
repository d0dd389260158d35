"""Hooked numpy forward pass with activation splicing and mean ablation.

All computation is float32. Every run carries a batch axis; cached tensors are
shaped as follows (B batch, N positions, H heads, d head dim, D model dim)::

    resid_pre / resid_mid / resid_post / mlp_out   (B, N, D)
    value / z                                       (B, N, H, d)
    head_out                                        (B, N, H, D)
    pattern                                         (B, H, N_query, N_key)
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import ModelError
from .bundle import ModelBundle

SITES = ("resid_pre", "head_out", "head_value", "head_pattern", "mlp_out")
HEAD_SITES = frozenset({"head_out", "head_value", "head_pattern"})
CACHE_NAMES = ("resid_pre", "pattern", "value", "z", "head_out", "resid_mid", "mlp_out", "resid_post")

# Patch site -> cache entry holding the donor activation.
SITE_TO_CACHE = {
    "resid_pre": "resid_pre",
    "head_out": "head_out",
    "head_value": "value",
    "head_pattern": "pattern",
    "mlp_out": "mlp_out",
}

_GELU_C = np.float32(math.sqrt(2.0 / math.pi))


@dataclass(frozen=True)
class PatchTarget:
    site: str
    layer: int
    head: int | None = None
    positions: tuple[int, ...] | None = None  # None means every position

    def __post_init__(self):
        if self.site not in SITES:
            raise ModelError(f"unknown patch site {self.site!r}")
        if (self.site in HEAD_SITES) != (self.head is not None):
            raise ModelError(f"site {self.site} {'needs' if self.site in HEAD_SITES else 'takes no'} head index")
        if self.positions is not None:
            object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))


@dataclass(frozen=True)
class PatchSpec:
    """Sites to overwrite with a donor run's activations.

    ``direction`` is bookkeeping for scoring: ``denoise`` runs corrupted tokens
    with clean activations spliced in, ``noise`` the reverse.
    """

    targets: tuple[PatchTarget, ...] = ()
    direction: str = "denoise"

    def __post_init__(self):
        if self.direction not in ("denoise", "noise"):
            raise ModelError(f"unknown patch direction {self.direction!r}")
        object.__setattr__(self, "targets", tuple(self.targets))

    def validate(self, cfg, n_tokens: int) -> None:
        for t in self.targets:
            if not 0 <= t.layer < cfg.n_layers:
                raise ModelError(f"patch layer {t.layer} out of range [0, {cfg.n_layers})")
            if t.head is not None and not 0 <= t.head < cfg.n_heads:
                raise ModelError(f"patch head {t.head} out of range [0, {cfg.n_heads})")
            if t.positions is not None and any(not 0 <= p < n_tokens for p in t.positions):
                raise ModelError(f"patch positions {t.positions} out of range [0, {n_tokens})")


@dataclass
class ActivationCache:
    """Activations recorded during one (possibly intervened) batched run."""

    tokens: np.ndarray
    store: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    logits: np.ndarray | None = None  # (B, N, V), or (B, 1, V) when only the last row was computed
    last_only: bool = False

    def __getitem__(self, key: tuple[str, int]) -> np.ndarray:
        try:
            return self.store[key]
        except KeyError:
            raise KeyError(f"activation {key} was not recorded") from None

    def __contains__(self, key) -> bool:
        return key in self.store

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[1]

    def logits_at(self, position: int) -> np.ndarray:
        """Logits ``(B, V)`` at a sequence position."""
        if self.last_only:
            if position not in (-1, self.n_tokens - 1):
                raise ModelError("only last-position logits were computed for this run")
            return self.logits[:, 0]
        return self.logits[:, position]

    def final_logits(self) -> np.ndarray:
        return self.logits_at(self.n_tokens - 1)

    def with_replaced(self, name: str, layer: int, head: int, other: ActivationCache) -> ActivationCache:
        """Copy of this cache where one head's slice of ``name`` comes from ``other``."""
        store = dict(self.store)
        arr = self[name, layer].copy()
        src = other[name, layer]
        if name == "pattern":
            arr[:, head] = src[:, head]
        else:
            arr[:, :, head] = src[:, :, head]
        store[name, layer] = arr
        return ActivationCache(self.tokens, store, self.logits, self.last_only)


def layer_norm(x: np.ndarray, w: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + np.float32(eps)) * w + b


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh-approximated GELU, as used by GPT-2."""
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(_GELU_C * (x + np.float32(0.044715) * x**3)))


def _as_batch(tokens) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ModelError(f"tokens must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def _pos_index(positions: tuple[int, ...] | None):
    return slice(None) if positions is None else list(positions)


def forward(
    bundle: ModelBundle,
    tokens,
    patch: PatchSpec | None = None,
    donor: ActivationCache | None = None,
    ablation_means: Mapping[tuple[int, int], np.ndarray] | None = None,
    *,
    record: Iterable[str] | None = None,
    last_only: bool = False,
    resume: ActivationCache | None = None,
) -> ActivationCache:
    """Run the model, splicing activations as requested.

    ``ablation_means`` maps ``(layer, head)`` to a ``(N, D)`` mean head output;
    every listed head is replaced by it. Patches are applied after ablation.
    ``record`` limits which cache entries are kept (default: all).
    ``resume`` is an unpatched cache of the same tokens: layers before the first
    intervened layer are taken from it instead of being recomputed.
    """
    cfg = bundle.config
    tokens = _as_batch(tokens)
    B, N = tokens.shape
    if N > cfg.max_positions:
        raise ModelError(f"sequence too long: {N} > max_positions {cfg.max_positions}")
    if N == 0:
        raise ModelError("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ModelError("token id out of vocabulary range")
    keep = set(CACHE_NAMES) if record is None else set(record)
    unknown = keep - set(CACHE_NAMES)
    if unknown:
        raise ModelError(f"unknown cache names {sorted(unknown)}")

    patch = patch or PatchSpec()
    patch.validate(cfg, N)
    by_layer: dict[int, dict[str, list[PatchTarget]]] = defaultdict(lambda: defaultdict(list))
    for t in patch.targets:
        if donor is None:
            raise ModelError("patch targets given without a donor cache")
        key = (SITE_TO_CACHE[t.site], t.layer)
        if key not in donor:
            raise ModelError(f"donor cache does not cover {t.site} at layer {t.layer}")
        if donor[key].shape[0] != B or donor.n_tokens != N:
            raise ModelError(
                f"donor/target shape mismatch at {t.site} layer {t.layer}: donor batch "
                f"{donor[key].shape[0]}x{donor.n_tokens}, target {B}x{N}"
            )
        by_layer[t.layer][t.site].append(t)

    ablate: dict[int, list[tuple[int, np.ndarray]]] = defaultdict(list)
    for (l, h), mean in (ablation_means or {}).items():
        if not (0 <= l < cfg.n_layers and 0 <= h < cfg.n_heads):
            raise ModelError(f"ablated head ({l}, {h}) out of range")
        mean = np.asarray(mean, dtype=np.float32)
        if mean.shape != (N, cfg.d_model):
            raise ModelError(f"ablation mean for head ({l}, {h}) has shape {mean.shape}, expected {(N, cfg.d_model)}")
        ablate[l].append((h, mean))

    cache = ActivationCache(tokens=tokens, last_only=last_only)
    start = 0
    if resume is not None:
        if resume.tokens.shape != tokens.shape or not np.array_equal(resume.tokens, tokens):
            raise ModelError("resume cache was computed on different tokens")
        touched = set(by_layer) | set(ablate)
        start = min(touched) if touched else cfg.n_layers
        for (name, l), arr in resume.store.items():
            if l < start and name in keep:
                cache.store[name, l] = arr

    if start == 0:
        x = bundle.W_E[tokens] + bundle.W_pos[:N]
    elif start < cfg.n_layers:
        if ("resid_pre", start) not in resume:
            raise ModelError(f"resume cache lacks resid_pre at layer {start}")
        x = resume["resid_pre", start]
    else:
        if ("resid_post", cfg.n_layers - 1) not in resume:
            raise ModelError("resume cache lacks the final residual stream")
        x = resume["resid_post", cfg.n_layers - 1]

    H, d, D = cfg.n_heads, cfg.d_head, cfg.d_model
    inv_sqrt_d = np.float32(1.0 / math.sqrt(d))
    causal = np.triu(np.ones((N, N), dtype=bool), k=1)
    eps = cfg.ln_epsilon

    for l in range(start, cfg.n_layers):
        layer = bundle.layers[l]
        sites = by_layer.get(l, {})

        if "resid_pre" in sites:
            x = x.copy()
            for t in sites["resid_pre"]:
                idx = _pos_index(t.positions)
                x[:, idx] = donor["resid_pre", l][:, idx]
        if "resid_pre" in keep:
            cache.store["resid_pre", l] = x

        h1 = layer_norm(x, layer.ln1_w, layer.ln1_b, eps)
        qkv = (h1.reshape(B * N, D) @ layer.W_QKV + layer.b_QKV).reshape(B, N, 3, H, d)
        q = qkv[:, :, 0].transpose(0, 2, 1, 3)  # (B, H, N, d)
        k = qkv[:, :, 1].transpose(0, 2, 3, 1)  # (B, H, d, N)
        v = np.ascontiguousarray(qkv[:, :, 2])  # (B, N, H, d)
        for t in sites.get("head_value", ()):
            idx = _pos_index(t.positions)
            v[:, idx, t.head] = donor["value", l][:, idx, t.head]
        if "value" in keep:
            cache.store["value", l] = v

        scores = (q @ k) * inv_sqrt_d
        scores[:, :, causal] = -np.inf
        scores -= scores.max(axis=-1, keepdims=True)
        pattern = np.exp(scores)
        pattern /= pattern.sum(axis=-1, keepdims=True)
        for t in sites.get("head_pattern", ()):
            idx = _pos_index(t.positions)
            pattern[:, t.head, idx] = donor["pattern", l][:, t.head, idx]
        if "pattern" in keep:
            cache.store["pattern", l] = pattern

        z = pattern @ v.transpose(0, 2, 1, 3)  # (B, H, N, d)
        if "z" in keep:
            cache.store["z", l] = z.transpose(0, 2, 1, 3)
        # Per-head write into the residual stream, (H, B, N, D).
        head_out = (z.transpose(1, 0, 2, 3).reshape(H, B * N, d) @ layer.W_O).reshape(H, B, N, D)
        for h, mean in ablate.get(l, ()):
            head_out[h] = mean
        for t in sites.get("head_out", ()):
            idx = _pos_index(t.positions)
            head_out[t.head][:, idx] = donor["head_out", l][:, idx, t.head]
        if "head_out" in keep:
            cache.store["head_out", l] = head_out.transpose(1, 2, 0, 3)

        x = x + (head_out.sum(axis=0) + layer.b_O)
        if "resid_mid" in keep:
            cache.store["resid_mid", l] = x

        h2 = layer_norm(x, layer.ln2_w, layer.ln2_b, eps)
        hidden = gelu(h2.reshape(B * N, D) @ layer.W_in + layer.b_in)
        mlp = (hidden @ layer.W_out + layer.b_out).reshape(B, N, D)
        for t in sites.get("mlp_out", ()):
            idx = _pos_index(t.positions)
            mlp[:, idx] = donor["mlp_out", l][:, idx]
        if "mlp_out" in keep:
            cache.store["mlp_out", l] = mlp

        x = x + mlp
        if "resid_post" in keep:
            cache.store["resid_post", l] = x

    final = x[:, -1:] if last_only else x
    final = layer_norm(final, bundle.lnf_w, bundle.lnf_b, eps)
    cache.logits = (final.reshape(-1, D) @ bundle.W_U).reshape(B, final.shape[1], cfg.vocab_size)
    return cache
