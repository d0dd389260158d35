"""Experiment configuration: a flat TOML file plus command-line overrides.

Recognised keys (all optional in the file; ``seed`` must come from somewhere)::

    checkpoint            model file or folder (falls back to $SYLLOGISTIC_CHECKPOINT_DIR)
    scheme                scheme name or mood-figure code, e.g. "AAA-1"
    schemes               list of schemes for the report command
    n_samples             symbolic instances to generate
    seed                  integer seed for sampling and corruption
    perturb               list drawn from "numeric", "quantifier"
    dataset               JSON-lines dataset written by `generate`
    nonsymbolic           CSV of s,m,p,label rows, or "bundled"
    intervention          middle_term | all_term | subject_term
    direction             denoise | noise
    sweep                 list drawn from residual, head_out, head_value, head_pattern, value_roles, attention
    circuit               JSON circuit file ({"heads": ["11.10", ...]})
    heads                 heads for the lens command
    sender, receiver      heads for path patching
    query_role            role whose attention row is profiled
    output                output directory
    workers, batch_size   parallelism and chunk size
    necessity_fraction    C1 margin (default 0.5)
    sufficiency_fraction  C2 margin (default 0.9)
    heatmap               also write PPM heatmaps of score matrices
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..datasets import SCHEMES

CHECKPOINT_ENV = "SYLLOGISTIC_CHECKPOINT_DIR"


class UsageError(Exception):
    """Bad flags, bad config keys or values."""


@dataclass
class ExperimentConfig:
    checkpoint: str | None = None
    scheme: str = "AAA-1"
    schemes: list[str] = field(default_factory=lambda: [s.code for s in SCHEMES])
    n_samples: int = 90
    seed: int | None = None
    perturb: list[str] = field(default_factory=list)
    dataset: str | None = None
    nonsymbolic: str | None = None
    intervention: str = "middle_term"
    direction: str = "denoise"
    sweep: list[str] = field(default_factory=lambda: ["head_out"])
    circuit: str | None = None
    heads: list[str] = field(default_factory=lambda: ["11.10"])
    sender: str | None = None
    receiver: str | None = None
    query_role: str = "p"
    output: str = "results"
    workers: int = 1
    batch_size: int = 16
    necessity_fraction: float = 0.5
    sufficiency_fraction: float = 0.9
    heatmap: bool = False

    def provenance(self) -> dict:
        """Everything that determines results; the output directory is left out."""
        doc = asdict(self)
        doc.pop("output")
        return doc

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("a seed is required: pass --seed or set `seed` in the config file")
        return self.seed

    def checkpoint_path(self) -> Path | None:
        value = self.checkpoint or os.environ.get(CHECKPOINT_ENV)
        return Path(value) if value else None


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if kind.startswith("list"):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list) or not all(isinstance(v, (str, int, float)) for v in value):
            raise UsageError(f"config key {key!r} must be a list of strings")
        return [str(v) for v in value]
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            try:
                value = int(str(value), 10)
            except ValueError:
                raise UsageError(f"config key {key!r} must be an integer, got {value!r}") from None
        return value
    if kind.startswith("float"):
        if isinstance(value, bool):
            raise UsageError(f"config key {key!r} must be a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise UsageError(f"config key {key!r} must be a number, got {value!r}") from None
    if kind.startswith("bool"):
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r} must be true or false")
        return value
    if not isinstance(value, (str, int)):
        raise UsageError(f"config key {key!r} must be a string")
    return str(value)


def load_config(path: str | Path | None, overrides: dict) -> ExperimentConfig:
    """Merge file values and non-``None`` overrides over the defaults."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"config {path} is not valid TOML: {exc}") from None
        unknown = sorted(set(raw) - set(_TYPES))
        if unknown:
            raise UsageError(f"unknown config keys {unknown}; the recognised keys are listed in the README")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
