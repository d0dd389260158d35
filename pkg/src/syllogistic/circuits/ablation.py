"""Circuit specs, position-wise mean ablation, and necessity/sufficiency curves."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import InterventionError
from ..io import dumps_csv, dumps_json
from ..metrics import accuracy, batch_logit_differences
from ..model import forward

Head = tuple[int, int]

# Induction (5.8, 6.1, 6.15, 7.2), previous-token (8.1), middle-term suppression
# (11.10) and the mover heads.
DEFAULT_HEADS: tuple[Head, ...] = (
    (5, 8), (6, 1), (6, 15), (7, 2),
    (8, 1),
    (11, 10),
    (9, 9), (11, 1), (12, 1), (14, 14), (15, 14), (17, 2), (18, 12), (19, 1), (23, 10),
)  # fmt: skip


def parse_head(value) -> Head:
    """Accept ``"11.10"``, ``"11,10"``, ``[11, 10]`` or ``(11, 10)``."""
    if isinstance(value, str):
        parts = value.replace(",", ".").split(".")
        if len(parts) != 2:
            raise InterventionError(f"cannot parse head {value!r}; expected 'layer.head'")
        value = parts
    try:
        layer, head = (int(v) for v in value)
    except (TypeError, ValueError):
        raise InterventionError(f"cannot parse head {value!r}; expected 'layer.head'") from None
    return layer, head


def head_name(head: Head) -> str:
    return f"{head[0]}.{head[1]}"


@dataclass(frozen=True)
class CircuitSpec:
    heads: tuple[Head, ...]
    name: str = "custom"

    def __post_init__(self):
        heads = tuple(parse_head(h) for h in self.heads)
        if len(set(heads)) != len(heads):
            raise InterventionError(f"circuit {self.name!r} lists a head twice")
        object.__setattr__(self, "heads", heads)

    @classmethod
    def default(cls) -> "CircuitSpec":
        return cls(DEFAULT_HEADS, "default")

    @classmethod
    def all_heads(cls, config) -> "CircuitSpec":
        return cls(tuple((l, h) for l in range(config.n_layers) for h in range(config.n_heads)), "all")

    @classmethod
    def from_file(cls, path) -> "CircuitSpec":
        """Read ``{"name": ..., "heads": ["11.10", ...]}``."""
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InterventionError(f"cannot read circuit file {path}: {exc}") from None
        if not isinstance(doc, dict) or "heads" not in doc:
            raise InterventionError(f"circuit file {path} needs a 'heads' list")
        return cls(tuple(doc["heads"]), doc.get("name", Path(path).stem))

    def validate(self, config) -> None:
        for l, h in self.heads:
            if not (0 <= l < config.n_layers and 0 <= h < config.n_heads):
                raise InterventionError(f"circuit head {l}.{h} does not exist in a {config.n_layers}x{config.n_heads} model")

    def to_dict(self) -> dict:
        return {"name": self.name, "heads": [head_name(h) for h in self.heads]}


def _batch(instances) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not instances:
        raise InterventionError("no instances given")
    lengths = {len(i.tokens) for i in instances}
    if len(lengths) != 1:
        raise InterventionError(f"mixed prompt lengths {sorted(lengths)}; mean ablation needs one template")
    tokens = np.array([i.tokens for i in instances], dtype=np.int64)
    answers = np.array([i.answer_token for i in instances], dtype=np.int64)
    distractors = np.array([i.distractor_token for i in instances], dtype=np.int64)
    return tokens, answers, distractors


def mean_table(bundle, instances, *, batch_size: int = 16) -> dict[Head, np.ndarray]:
    """Per (layer, head): the batch mean of the head's output at every position, ``(N, D)``.

    Accumulated in float64 and stored as read-only float32.
    """
    tokens, _, _ = _batch(instances)
    cfg = bundle.config
    total = np.zeros((cfg.n_layers, tokens.shape[1], cfg.n_heads, cfg.d_model), dtype=np.float64)
    for start in range(0, len(tokens), batch_size):
        cache = forward(bundle, tokens[start : start + batch_size], record=("head_out",), last_only=True)
        for l in range(cfg.n_layers):
            total[l] += cache["head_out", l].sum(axis=0, dtype=np.float64)
    means = (total / len(tokens)).astype(np.float32)
    table = {}
    for l in range(cfg.n_layers):
        for h in range(cfg.n_heads):
            arr = np.ascontiguousarray(means[l, :, h])
            arr.setflags(write=False)
            table[l, h] = arr
    return table


@dataclass(frozen=True)
class AblationStep:
    heads: tuple[Head, ...]
    mean: float
    std: float


@dataclass
class AblationCurve:
    """Mean logit difference after each cumulative ablation step.

    ``heads`` of step k lists the heads changed so far: knocked out for
    ``necessity``, restored for ``sufficiency``.
    """

    mode: str
    baseline: float
    baseline_std: float
    steps: list[AblationStep]
    baseline_deltas: np.ndarray = field(repr=False)
    step_deltas: np.ndarray = field(repr=False)

    @property
    def final(self) -> float:
        return self.steps[-1].mean

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "baseline": self.baseline,
            "baseline_std": self.baseline_std,
            "steps": [
                {"heads": [head_name(h) for h in s.heads], "mean": s.mean, "std": s.std} for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())


class _Runner:
    """Last-position logit differences under mean ablation, resuming from a clean run."""

    def __init__(self, bundle, instances, means, batch_size):
        self.bundle = bundle
        self.tokens, self.answers, self.distractors = _batch(instances)
        self.means = means if means is not None else mean_table(bundle, instances, batch_size=batch_size)
        self.batch_size = batch_size
        self.bases = [
            forward(bundle, self.tokens[s : s + batch_size], record=("resid_pre", "resid_post"), last_only=True)
            for s in range(0, len(self.tokens), batch_size)
        ]

    def deltas(self, ablated: Iterable[Head]) -> np.ndarray:
        ablation = {h: self.means[h] for h in ablated}
        out = []
        for i, base in enumerate(self.bases):
            sl = slice(i * self.batch_size, (i + 1) * self.batch_size)
            if ablation:
                base = forward(self.bundle, base.tokens, ablation_means=ablation, resume=base, record=(), last_only=True)
            out.append(batch_logit_differences(base.final_logits(), self.answers[sl], self.distractors[sl]))
        return np.concatenate(out)


def _curve(mode, runner, schedule) -> AblationCurve:
    baseline = runner.deltas(())
    rows, steps = [], []
    for changed, ablated in schedule:
        d = baseline if not ablated else runner.deltas(ablated)
        rows.append(d)
        steps.append(AblationStep(tuple(changed), float(d.mean()), float(d.std())))
    return AblationCurve(mode, float(baseline.mean()), float(baseline.std()), steps, baseline, np.array(rows))


def necessity_curve(bundle, circuit: CircuitSpec, instances, *, means=None, batch_size: int = 16) -> AblationCurve:
    """Knock circuit heads out one at a time, from the last layer back to the first.

    Step 0 is the unablated model; within a layer heads go in ascending index order.
    """
    circuit.validate(bundle.config)
    order = sorted(circuit.heads, key=lambda lh: (-lh[0], lh[1]))
    runner = _Runner(bundle, instances, means, batch_size)
    schedule = [(order[:k], order[:k]) for k in range(len(order) + 1)]
    return _curve("necessity", runner, schedule)


def sufficiency_curve(bundle, circuit: CircuitSpec, instances, *, means=None, batch_size: int = 16) -> AblationCurve:
    """Start with every head ablated and restore circuit heads from the first layer on.

    The final step keeps exactly the circuit's heads.
    """
    cfg = bundle.config
    circuit.validate(cfg)
    order = sorted(circuit.heads)
    everything = [(l, h) for l in range(cfg.n_layers) for h in range(cfg.n_heads)]
    runner = _Runner(bundle, instances, means, batch_size)
    schedule = []
    for k in range(len(order) + 1):
        restored = set(order[:k])
        schedule.append((order[:k], [lh for lh in everything if lh not in restored]))
    return _curve("sufficiency", runner, schedule)


@dataclass(frozen=True)
class Conditions:
    c1: bool
    c2: bool
    c3: bool
    accuracy: float
    baseline: float
    necessity_final: float
    sufficiency_final: float

    def to_dict(self) -> dict:
        return {
            "C1": self.c1,
            "C2": self.c2,
            "C3": self.c3,
            "accuracy": self.accuracy,
            "baseline": self.baseline,
            "necessity_final": self.necessity_final,
            "sufficiency_final": self.sufficiency_final,
        }


def evaluate_conditions(
    necessity: AblationCurve,
    sufficiency: AblationCurve,
    baseline_deltas: Sequence[float] | None = None,
    *,
    necessity_fraction: float = 0.5,
    sufficiency_fraction: float = 0.9,
) -> Conditions:
    """Necessity (C1), sufficiency (C2) and a positive baseline (C3).

    C1 holds when the fully ablated circuit scores below ``necessity_fraction``
    of the baseline; C2 when the circuit alone keeps at least
    ``sufficiency_fraction`` of it. Fractions are taken of ``|baseline|`` so the
    thresholds stay below the baseline when it is negative.
    """
    deltas = np.asarray(necessity.baseline_deltas if baseline_deltas is None else baseline_deltas, dtype=np.float64)
    baseline = float(deltas.mean())
    slack = abs(baseline)
    c1 = necessity.final < baseline - (1 - necessity_fraction) * slack
    c2 = sufficiency.final >= baseline - (1 - sufficiency_fraction) * slack
    return Conditions(
        c1=bool(c1),
        c2=bool(c2),
        c3=baseline > 0,
        accuracy=accuracy(deltas),
        baseline=baseline,
        necessity_final=necessity.final,
        sufficiency_final=sufficiency.final,
    )


def scheme_report_csv(rows: Sequence[tuple[str, Conditions]]) -> str:
    """Table of scheme, C1, C2, C3 and accuracy, one row per scheme."""
    mark = lambda ok: "yes" if ok else "no"  # noqa: E731
    return dumps_csv(
        ("scheme", "C1", "C2", "C3", "accuracy"),
        ((name, mark(c.c1), mark(c.c2), mark(c.c3), c.accuracy) for name, c in rows),
    )
