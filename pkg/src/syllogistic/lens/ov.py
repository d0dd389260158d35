"""Input-agnostic OV-circuit lens: ``W_E[src] W_V^h W_O^h W_U[:, out]``.

Layer norms and biases are left out; only weight matrices enter the product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..datasets import LETTERS
from ..errors import InterventionError
from ..io import dumps_csv, dumps_json


@dataclass(frozen=True)
class LensMatrix:
    """Rows are source tokens, columns the output tokens whose logits they move."""

    head: tuple[int, int]
    token_ids: tuple[int, ...]
    labels: tuple[str, ...]
    matrix: np.ndarray

    def to_dict(self) -> dict:
        return {
            "head": f"{self.head[0]}.{self.head[1]}",
            "tokens": list(self.labels),
            "token_ids": list(self.token_ids),
            "matrix": self.matrix,
            "diagonal_score": diagonal_score(self),
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_csv(self) -> str:
        rows = ([label, *row] for label, row in zip(self.labels, self.matrix.tolist()))
        return dumps_csv(["source", *self.labels], rows)


def ov_lens(bundle, head, vocab_subset: Sequence[int] | None = None) -> LensMatrix:
    """OV lens of ``head`` restricted to ``vocab_subset`` (default: the 26 letter tokens)."""
    layer, h = head
    cfg = bundle.config
    if not (0 <= layer < cfg.n_layers and 0 <= h < cfg.n_heads):
        raise InterventionError(f"head {layer}.{h} out of range")
    tok = bundle.tokenizer
    if vocab_subset is None:
        if tok is None:
            raise InterventionError("a tokenizer is needed for the default letter subset")
        vocab_subset = [tok.token_id(letter) for letter in LETTERS]
    ids = np.asarray(list(vocab_subset), dtype=np.int64)
    if ids.size == 0 or ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InterventionError("vocab subset must be non-empty token ids inside the vocabulary")
    w = bundle.layers[layer]
    W_E = bundle.W_E[ids].astype(np.float64)
    ov = w.W_V[h].astype(np.float64) @ w.W_O[h].astype(np.float64)  # (D, D)
    W_U = bundle.W_U[:, ids].astype(np.float64)
    matrix = W_E @ ov @ W_U
    labels = tuple(tok.decode([int(i)]) for i in ids) if tok is not None else tuple(str(int(i)) for i in ids)
    return LensMatrix((layer, h), tuple(int(i) for i in ids), labels, matrix)


def diagonal_score(lens: LensMatrix | np.ndarray) -> float:
    """Mean of the diagonal minus mean of the off-diagonal; negative means self-suppression."""
    m = np.asarray(lens.matrix if isinstance(lens, LensMatrix) else lens, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InterventionError(f"diagonal score needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    diag = np.trace(m) / n
    if n == 1:
        return float(diag)
    off = (m.sum() - np.trace(m)) / (n * n - n)
    return float(diag - off)
