"""Mover-head classification from role-scoped value-patching scores.

PPD = |S[p]| - |S[m1] + S[m2]| goes on the x axis and the all-position score
S on the y axis; the signs pick the quadrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import InterventionError
from ..io import dumps_json

QUADRANTS = {
    (1, 1): "positive_copy",
    (-1, 1): "positive_suppression",
    (-1, -1): "negative_copy",
    (1, -1): "negative_suppression",
}


@dataclass(frozen=True)
class MoverClassification:
    head: tuple[int, int]
    s_all: float
    s_p: float
    s_m1: float
    s_m2: float
    ppd: float
    quadrant: str | None
    outlier: bool

    def to_dict(self) -> dict:
        return {
            "head": f"{self.head[0]}.{self.head[1]}",
            "S_all": self.s_all,
            "S_p": self.s_p,
            "S_m1": self.s_m1,
            "S_m2": self.s_m2,
            "PPD": self.ppd,
            "quadrant": self.quadrant,
            "outlier": self.outlier,
        }


def ppd(s_p: float, s_m1: float, s_m2: float) -> float:
    return abs(s_p) - abs(s_m1 + s_m2)


def quadrant(ppd_value: float, s_all: float) -> str | None:
    """Quadrant name, or ``None`` when either coordinate is zero or undefined."""
    if not (math.isfinite(ppd_value) and math.isfinite(s_all)) or ppd_value == 0 or s_all == 0:
        return None
    return QUADRANTS[int(np.sign(ppd_value)), int(np.sign(s_all))]


def outlier_threshold(s_all: np.ndarray) -> float:
    """``mu + 2 sigma`` of ``|S|`` over all heads with a defined score."""
    mags = np.abs(np.asarray(s_all, dtype=np.float64))
    mags = mags[np.isfinite(mags)]
    if mags.size == 0:
        return math.inf
    return float(mags.mean() + 2 * mags.std())


def _matrix(value) -> np.ndarray:
    return np.asarray(getattr(value, "scores", value), dtype=np.float64)


def classify_movers(scores: Mapping[str, object]) -> list[MoverClassification]:
    """Classify every head from ``{"all", "p", "m1", "m2"}`` score matrices (or sweep results)."""
    missing = {"all", "p", "m1", "m2"} - set(scores)
    if missing:
        raise InterventionError(f"mover classification needs scores for roles {sorted(missing)}")
    s_all, s_p, s_m1, s_m2 = (_matrix(scores[k]) for k in ("all", "p", "m1", "m2"))
    if not (s_all.shape == s_p.shape == s_m1.shape == s_m2.shape) or s_all.ndim != 2:
        raise InterventionError("role score matrices must share one (layers, heads) shape")
    tau = outlier_threshold(s_all)
    out = []
    L, H = s_all.shape
    for l in range(L):
        for h in range(H):
            x = ppd(s_p[l, h], s_m1[l, h], s_m2[l, h])
            y = float(s_all[l, h])
            out.append(
                MoverClassification(
                    head=(l, h),
                    s_all=y,
                    s_p=float(s_p[l, h]),
                    s_m1=float(s_m1[l, h]),
                    s_m2=float(s_m2[l, h]),
                    ppd=float(x),
                    quadrant=quadrant(x, y),
                    outlier=bool(math.isfinite(y) and abs(y) > tau),
                )
            )
    return out


def movers_json(classes: list[MoverClassification]) -> str:
    scores = np.array([c.s_all for c in classes])
    return dumps_json({"threshold": outlier_threshold(scores), "heads": [c.to_dict() for c in classes]})
