"""Result containers for sweeps and attention profiles, with JSON/CSV export."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..io import dumps_csv, dumps_json

AXES = ("layer_position", "layer_head")
DIRECTIONS = ("denoise", "noise")


@dataclass
class SweepResult:
    """Mean patching scores over a grid of sites.

    ``samples`` keeps the per-sample scores ``(rows, cols, n)`` with NaN where
    a sample's score was undefined; ``counts`` is the number of finite ones.
    """

    axis: str
    site: str
    direction: str
    scores: np.ndarray
    stds: np.ndarray
    counts: np.ndarray
    n: int
    row_labels: list[str]
    col_labels: list[str]
    legend: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        shape = (len(self.row_labels), len(self.col_labels))
        for name in ("scores", "stds", "counts"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        finite = self.scores[np.isfinite(self.scores)]
        if finite.size and (finite.min() < -1 or finite.max() > 1):
            raise ValueError("mean patching scores must lie in [-1, 1]")

    @classmethod
    def from_samples(cls, samples: np.ndarray, **kwargs) -> "SweepResult":
        counts = np.isfinite(samples).sum(axis=-1)
        with np.errstate(invalid="ignore"):
            safe = np.where(np.isfinite(samples), samples, 0.0)
            means = np.where(counts > 0, safe.sum(-1) / np.maximum(counts, 1), np.nan)
            dev = np.where(np.isfinite(samples), samples - means[..., None], 0.0)
            stds = np.where(counts > 0, np.sqrt((dev**2).sum(-1) / np.maximum(counts, 1)), np.nan)
        return cls(scores=means, stds=stds, counts=counts, n=samples.shape[-1], samples=samples, **kwargs)

    def top(self, k: int = 5, sign: int = 1) -> list[tuple[int, int, float]]:
        """The ``k`` cells with the largest ``sign * score``, as ``(row, col, score)``."""
        flat = np.where(np.isfinite(self.scores), sign * self.scores, -np.inf).ravel()
        order = np.argsort(-flat, kind="stable")[:k]
        cols = self.scores.shape[1]
        return [(int(i // cols), int(i % cols), float(self.scores.flat[i])) for i in order]

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "site": self.site,
            "direction": self.direction,
            "n": self.n,
            "rows": self.row_labels,
            "cols": self.col_labels,
            "legend": self.legend,
            "cells": [
                [
                    {"mean": self.scores[r, c], "std": self.stds[r, c], "n": int(self.counts[r, c])}
                    for c in range(len(self.col_labels))
                ]
                for r in range(len(self.row_labels))
            ],
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_csv(self) -> str:
        rows = (
            (self.row_labels[r], self.col_labels[c], self.scores[r, c], self.stds[r, c], int(self.counts[r, c]))
            for r in range(len(self.row_labels))
            for c in range(len(self.col_labels))
        )
        return dumps_csv(("row", "col", "mean", "std", "n"), rows)


@dataclass
class AttentionProfile:
    """Batch-mean attention from a query role to each key column.

    Columns are role positions in order, with each run of non-role positions
    pooled (averaged) into a single ``"–"`` column.
    """

    query_role: str
    columns: list[tuple[str, tuple[int, ...]]]
    weights: np.ndarray  # (L, H, n_columns, B)

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.columns]

    @property
    def means(self) -> np.ndarray:
        return self.weights.mean(axis=-1)

    @property
    def stds(self) -> np.ndarray:
        return self.weights.std(axis=-1)

    def weight(self, layer: int, head: int, role: str) -> tuple[float, float]:
        """Mean and std of the weight on the first column labelled ``role``."""
        idx = self.labels.index(role)
        w = self.weights[layer, head, idx]
        return float(w.mean()), float(w.std())

    def to_dict(self, heads=None) -> dict:
        L, H = self.weights.shape[:2]
        heads = heads if heads is not None else [(l, h) for l in range(L) for h in range(H)]
        return {
            "query_role": self.query_role,
            "columns": [{"label": label, "positions": list(pos)} for label, pos in self.columns],
            "n": self.weights.shape[-1],
            "heads": [
                {
                    "head": f"{l}.{h}",
                    "mean": self.means[l, h],
                    "std": self.stds[l, h],
                }
                for l, h in heads
            ],
        }

    def to_json(self, heads=None) -> str:
        return dumps_json(self.to_dict(heads))
