"""Command implementations. Each takes an ``ExperimentConfig`` and writes reports."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .. import __version__
from ..circuits import (
    CircuitSpec,
    classify_movers,
    evaluate_conditions,
    mean_table,
    necessity_curve,
    outlier_threshold,
    parse_head,
    scheme_report_csv,
    sufficiency_curve,
)
from ..datasets import (
    INTERVENTIONS,
    bundled_nonsymbolic_path,
    corrupt_all,
    dataset_summary,
    dumps_jsonl,
    generate_symbolic,
    get_scheme,
    ingest_nonsymbolic,
    load_jsonl,
    perturb_all,
)
from ..errors import CheckpointError, DatasetError
from ..interventions import (
    attention_profile,
    head_output_sweep,
    head_pattern_sweep,
    head_value_sweep,
    path_patch,
    path_patch_senders,
    residual_sweep,
    role_value_sweeps,
)
from ..interventions.results import DIRECTIONS
from ..io import atomic_write, dumps_json, sha256_bytes, sha256_file
from ..lens import diagonal_score, ov_lens
from ..metrics import accuracy, batch_logit_differences, batch_stats
from ..model import forward, gpt2_tokenizer, load_bundle
from .config import CHECKPOINT_ENV, ExperimentConfig, UsageError
from .heatmap import ppm_heatmap

SWEEPS = ("residual", "head_out", "head_value", "head_pattern", "value_roles", "attention")
PERTURBATIONS = ("numeric", "quantifier")


def validate(config: ExperimentConfig) -> None:
    """Reject out-of-range values before any work starts."""
    if config.intervention not in INTERVENTIONS:
        raise UsageError(f"intervention must be one of {INTERVENTIONS}, got {config.intervention!r}")
    if config.direction not in DIRECTIONS:
        raise UsageError(f"direction must be one of {DIRECTIONS}, got {config.direction!r}")
    for kind in config.sweep:
        if kind not in SWEEPS:
            raise UsageError(f"unknown sweep {kind!r}; expected one of {SWEEPS}")
    for kind in config.perturb:
        if kind not in PERTURBATIONS:
            raise UsageError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")
    if config.workers < 1 or config.batch_size < 1:
        raise UsageError("workers and batch_size must be at least 1")
    for name in ("necessity_fraction", "sufficiency_fraction"):
        if not 0 < getattr(config, name) <= 1:
            raise UsageError(f"{name} must lie in (0, 1]")
    for name in ("dataset", "circuit"):
        value = getattr(config, name)
        if value is not None and not Path(value).is_file():
            hint = " (write one with `syllogistic generate`)" if name == "dataset" else ""
            raise UsageError(f"{name} file {value} does not exist{hint}")
    if config.nonsymbolic not in (None, "bundled") and not Path(config.nonsymbolic).is_file():
        raise UsageError(f"nonsymbolic file {config.nonsymbolic} does not exist")


class Session:
    """Per-command state: the config, the loaded model and provenance hashes."""

    def __init__(self, command: str, config: ExperimentConfig, *, needs_model: bool = True):
        validate(config)
        self.command = command
        self.config = config
        self.seed = config.require_seed()
        self.out = Path(config.output)
        self.bundle = None
        self.model_hash = None
        if needs_model:
            self.bundle, self.model_hash = _load_model(config)
        self.tokenizer = self.bundle.tokenizer if self.bundle is not None else gpt2_tokenizer()
        self.dataset_hash = None

    def provenance(self) -> dict:
        config = self.config.provenance()
        return {
            "command": self.command,
            "config": config,
            "config_hash": sha256_bytes(dumps_json(config).encode("utf-8")),
            "seed": self.seed,
            "model_hash": self.model_hash,
            "dataset_hash": self.dataset_hash,
            "version": __version__,
        }

    def report(self, name: str, body: dict) -> Path:
        return atomic_write(self.out / name, dumps_json({"provenance": self.provenance(), **body}))

    def write(self, name: str, data: str | bytes) -> Path:
        return atomic_write(self.out / name, data)

    # Datasets --------------------------------------------------------------

    def instances(self, scheme: str | None = None) -> list:
        """The configured dataset with perturbations applied.

        The source is ``dataset``, else ``nonsymbolic``, else generated symbolic
        data. An explicit ``scheme`` always generates.
        """
        cfg = self.config
        if scheme is None and cfg.dataset is not None:
            instances = self.load(cfg.dataset)
        elif scheme is None and cfg.nonsymbolic is not None:
            instances = self.nonsymbolic(cfg.nonsymbolic)
        else:
            instances = generate_symbolic(scheme or cfg.scheme, cfg.n_samples, self.seed, tokenizer=self.tokenizer)
        instances = self.perturbed(instances)
        self.dataset_hash = sha256_bytes(dumps_jsonl(instances).encode("utf-8"))
        return instances

    def perturbed(self, instances) -> list:
        for kind in self.config.perturb:
            instances = perturb_all(instances, kind, self.seed, tokenizer=self.tokenizer)
        return instances

    def load(self, path) -> list:
        instances = load_jsonl(path, self.tokenizer)
        if not instances:
            raise DatasetError(f"dataset {path} is empty")
        return instances

    def nonsymbolic(self, source: str) -> list:
        path = bundled_nonsymbolic_path() if source == "bundled" else Path(source)
        result = ingest_nonsymbolic(path, self.config.scheme, tokenizer=self.tokenizer)
        for lineno, _, reason in result.rejected:
            print(f"skipped {path.name}:{lineno}: {reason}")
        if not result.instances:
            raise DatasetError(f"no usable rows in {path}")
        return result.instances

    def pairs(self, instances, intervention: str | None = None) -> list:
        intervention = intervention or self.config.intervention
        return corrupt_all(
            instances, intervention, self.seed, pool=replacement_pool(instances, intervention), tokenizer=self.tokenizer
        )


def replacement_pool(instances, intervention: str):
    """``None`` for letter or digit data; otherwise the dataset's own words for the edited role."""
    terms = {t for i in instances for t in i.terms.values()}
    if all(len(t.strip()) == 1 for t in terms):
        return None
    role = {"subject_term": "s", "middle_term": "m1"}.get(intervention)
    words = [getattr(i, role) for i in instances] if role else [t for i in instances for t in i.terms.values()]
    return tuple(dict.fromkeys(words))


def _load_model(config: ExperimentConfig):
    path = config.checkpoint_path()
    if path is None:
        raise CheckpointError(f"no checkpoint given; pass --checkpoint or set {CHECKPOINT_ENV}")
    bundle = load_bundle(path)
    files = [path / "model.safetensors", path / "config.json"] if path.is_dir() else [path]
    digests = [f"{f.name}:{sha256_file(f)}" for f in files if f.exists()]
    return bundle, sha256_bytes("\n".join(digests).encode("utf-8"))


def _deltas(bundle, instances, batch_size: int) -> np.ndarray:
    """Clean logit differences, batching prompts of equal length together."""
    out = np.empty(len(instances))
    by_length: dict[int, list[int]] = {}
    for idx, inst in enumerate(instances):
        by_length.setdefault(len(inst.tokens), []).append(idx)
    for n in sorted(by_length):
        rows = by_length[n]
        for start in range(0, len(rows), batch_size):
            chunk = rows[start : start + batch_size]
            group = [instances[k] for k in chunk]
            cache = forward(bundle, np.array([i.tokens for i in group]), last_only=True)
            out[chunk] = batch_logit_differences(
                cache.final_logits(), [i.answer_token for i in group], [i.distractor_token for i in group]
            )
    return out


def _stats_dict(values) -> dict:
    s = batch_stats(values)
    return {"mean": s.mean, "std": s.std, "n": s.count}


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def _write_sweep(session: Session, result, stem: str) -> None:
    session.report(f"{stem}.json", {"sweep": result.to_dict()})
    session.write(f"{stem}.csv", result.to_csv())
    if session.config.heatmap:
        session.write(f"{stem}.ppm", ppm_heatmap(result.scores))
    best = result.top(1, 1 if result.direction == "denoise" else -1)
    if best:
        r, c, v = best[0]
        print(f"{result.site}: strongest cell {result.row_labels[r]}/{result.col_labels[c]} = {v:+.3f}")


# Commands ------------------------------------------------------------------


def cmd_generate(config: ExperimentConfig) -> int:
    session = Session("generate", config, needs_model=False)
    get_scheme(config.scheme)
    instances = session.instances()
    summary = {"scheme": config.scheme, **dataset_summary(instances)}
    session.write("dataset.jsonl", dumps_jsonl(instances))
    session.report("dataset_summary.json", {"summary": summary})
    print(
        f"{summary['scheme']}: {summary['n_samples']} instances, "
        f"unique s/m/p = {summary['unique_s']}/{summary['unique_m']}/{summary['unique_p']}, "
        f"token lengths {summary['token_lengths']}"
    )
    return 0


def cmd_run(config: ExperimentConfig) -> int:
    session = Session("run", config)
    instances = session.instances()
    deltas = _deltas(session.bundle, instances, config.batch_size)
    body = {"accuracy": accuracy(deltas), "logit_difference": _stats_dict(deltas), "deltas": deltas}
    session.report("run.json", body)
    stats = body["logit_difference"]
    print(f"accuracy {body['accuracy']:.3f}; logit difference {stats['mean']:.3f} ± {stats['std']:.3f} (n={stats['n']})")
    return 0


def cmd_sweep(config: ExperimentConfig) -> int:
    session = Session("sweep", config)
    instances = session.instances()
    bundle, opts = session.bundle, {"batch_size": config.batch_size, "workers": config.workers}
    pairs = session.pairs(instances) if set(config.sweep) - {"attention"} else None
    for kind in config.sweep:
        if kind == "attention":
            profile = attention_profile(bundle, instances, config.query_role, batch_size=config.batch_size)
            session.report(f"attention_{_slug(config.query_role)}.json", {"attention": profile.to_dict()})
            continue
        if kind == "value_roles":
            for role, result in role_value_sweeps(bundle, pairs, config.direction, **opts).items():
                _write_sweep(session, result, f"sweep_head_value_{role}")
            continue
        sweep = {
            "residual": residual_sweep,
            "head_out": head_output_sweep,
            "head_value": head_value_sweep,
            "head_pattern": head_pattern_sweep,
        }[kind]
        _write_sweep(session, sweep(bundle, pairs, config.direction, **opts), f"sweep_{kind}")
    return 0


def cmd_path_patch(config: ExperimentConfig) -> int:
    if config.receiver is None:
        raise UsageError("path-patch needs --receiver (and optionally --sender)")
    session = Session("path-patch", config)
    receiver = parse_head(config.receiver)
    pairs = session.pairs(session.instances())
    if config.sender is None:
        result = path_patch_senders(session.bundle, pairs, receiver, batch_size=config.batch_size, workers=config.workers)
        _write_sweep(session, result, f"path_{_slug(config.receiver)}")
        return 0
    sender = parse_head(config.sender)
    result = path_patch(session.bundle, pairs, sender, receiver, batch_size=config.batch_size)
    body = {
        "sender": config.sender,
        "receiver": config.receiver,
        "score": {"mean": result.mean, "std": result.std, "n": result.n},
        "samples": result.samples,
    }
    session.report(f"path_{_slug(config.sender)}_{_slug(config.receiver)}.json", body)
    print(f"path {config.sender} -> {config.receiver}: {result.mean:+.3f} ± {result.std:.3f} (n={result.n})")
    return 0


def cmd_lens(config: ExperimentConfig) -> int:
    session = Session("lens", config)
    if not config.heads:
        raise UsageError("lens needs at least one head")
    for name in config.heads:
        lens = ov_lens(session.bundle, parse_head(name))
        stem = f"lens_{_slug(name)}"
        session.report(f"{stem}.json", {"lens": lens.to_dict()})
        session.write(f"{stem}.csv", lens.to_csv())
        if config.heatmap:
            limit = float(np.abs(lens.matrix).max()) or 1.0
            session.write(f"{stem}.ppm", ppm_heatmap(lens.matrix, limit=limit))
        print(f"head {name}: diagonal score {diagonal_score(lens):+.4f}")
    return 0


def _circuit(session: Session) -> CircuitSpec:
    return CircuitSpec.from_file(session.config.circuit) if session.config.circuit else CircuitSpec.default()


def _ablate(session: Session, circuit: CircuitSpec, instances):
    cfg = session.config
    means = mean_table(session.bundle, instances, batch_size=cfg.batch_size)
    nec = necessity_curve(session.bundle, circuit, instances, means=means, batch_size=cfg.batch_size)
    suf = sufficiency_curve(session.bundle, circuit, instances, means=means, batch_size=cfg.batch_size)
    cond = evaluate_conditions(
        nec,
        suf,
        necessity_fraction=cfg.necessity_fraction,
        sufficiency_fraction=cfg.sufficiency_fraction,
    )
    return nec, suf, cond


def cmd_ablate(config: ExperimentConfig) -> int:
    session = Session("ablate", config)
    circuit = _circuit(session)
    circuit.validate(session.bundle.config)
    nec, suf, cond = _ablate(session, circuit, session.instances())
    body = {
        "circuit": circuit.to_dict(),
        "necessity": nec.to_dict(),
        "sufficiency": suf.to_dict(),
        "conditions": cond.to_dict(),
    }
    session.report("ablation.json", body)
    mark = lambda ok: "yes" if ok else "no"  # noqa: E731
    print(
        f"baseline {cond.baseline:.3f}; necessity final {cond.necessity_final:.3f}; "
        f"sufficiency final {cond.sufficiency_final:.3f}; C1 {mark(cond.c1)} C2 {mark(cond.c2)} C3 {mark(cond.c3)}"
    )
    return 0


def cmd_movers(config: ExperimentConfig) -> int:
    session = Session("movers", config)
    pairs = session.pairs(session.instances(), "all_term")
    results = role_value_sweeps(
        session.bundle, pairs, config.direction, batch_size=config.batch_size, workers=config.workers
    )
    for role, result in results.items():
        _write_sweep(session, result, f"movers_value_{role}")
    classes = classify_movers(results)
    s_all = np.array([c.s_all for c in classes])
    body = {"threshold": outlier_threshold(s_all), "heads": [c.to_dict() for c in classes]}
    session.report("movers.json", body)
    for c in classes:
        if c.outlier:
            print(f"head {c.head[0]}.{c.head[1]}: S={c.s_all:+.3f} PPD={c.ppd:+.3f} {c.quadrant}")
    return 0


def _degradation(session: Session, instances) -> dict:
    pairs = session.pairs(instances, "subject_term")
    bundle, bs = session.bundle, session.config.batch_size
    clean = _deltas(bundle, [p.clean for p in pairs], bs)
    corrupted = _deltas(bundle, [p.corrupted for p in pairs], bs)
    return {"degradation": _stats_dict(clean - corrupted), "clean": _stats_dict(clean), "corrupted": _stats_dict(corrupted)}


def cmd_subject_bias(config: ExperimentConfig) -> int:
    session = Session("subject-bias", config)
    if config.dataset is not None:
        symbolic = session.load(config.dataset)
    else:
        symbolic = generate_symbolic(config.scheme, config.n_samples, session.seed, tokenizer=session.tokenizer)
    symbolic = session.perturbed(symbolic)
    words = session.nonsymbolic(config.nonsymbolic or "bundled")
    session.dataset_hash = sha256_bytes((dumps_jsonl(symbolic) + dumps_jsonl(words)).encode("utf-8"))
    body = {"symbolic": _degradation(session, symbolic), "nonsymbolic": _degradation(session, words)}
    session.report("subject_bias.json", body)
    for name in ("symbolic", "nonsymbolic"):
        d = body[name]["degradation"]
        print(f"{name}: degradation {d['mean']:+.3f} ± {d['std']:.3f} (n={d['n']})")
    return 0


def cmd_report(config: ExperimentConfig) -> int:
    session = Session("report", config)
    if not config.schemes:
        raise UsageError("report needs at least one scheme")
    circuit = _circuit(session)
    circuit.validate(session.bundle.config)
    rows, docs, hashes = [], {}, []
    for name in config.schemes:
        code = get_scheme(name).code
        instances = session.instances(code)
        hashes.append(session.dataset_hash)
        _, _, cond = _ablate(session, circuit, instances)
        rows.append((code, cond))
        docs[code] = cond.to_dict()
    session.dataset_hash = sha256_bytes("\n".join(hashes).encode("utf-8"))
    session.write("report.csv", scheme_report_csv(rows))
    session.report("report.json", {"circuit": circuit.to_dict(), "schemes": docs})
    print(scheme_report_csv(rows), end="")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "path-patch": cmd_path_patch,
    "lens": cmd_lens,
    "ablate": cmd_ablate,
    "movers": cmd_movers,
    "subject-bias": cmd_subject_bias,
    "report": cmd_report,
}

__all__ = ["COMMANDS", "SWEEPS", "PERTURBATIONS", "Session", "replacement_pool", "validate"]

