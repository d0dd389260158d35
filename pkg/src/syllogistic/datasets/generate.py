"""Symbolic generation, corruption, perturbation and non-symbolic ingestion."""

from __future__ import annotations

import csv
import itertools
import random
import string
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DatasetError
from ..model.tokenizer import BPETokenizer, gpt2_tokenizer
from .instances import INTERVENTIONS, PromptPair, SyllogismInstance, render
from .schemes import SyllogisticScheme, get_scheme, quantifier_variant

LETTERS = tuple(" " + c for c in string.ascii_uppercase)
DIGITS = tuple(f" {d}" for d in range(10))
LABELS = ("consistent", "inconsistent")

# Roles whose positions each corruption is allowed to touch.
EDITED_ROLES = {
    "middle_term": ("m2",),
    "all_term": ("s", "m1", "m2", "p"),
    "subject_term": ("s",),
}


def generate_symbolic(
    scheme: SyllogisticScheme | str,
    n_samples: int = 90,
    seed: int = 0,
    *,
    tokenizer: BPETokenizer | None = None,
) -> list[SyllogismInstance]:
    """Sample letter triples and emit the six role permutations of each.

    Letters within a triple are distinct. Triples are drawn until ``n_samples``
    instances exist, so the last triple may contribute fewer than six.
    """
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    if n_samples < 1:
        raise DatasetError("n_samples must be at least 1")
    rng = random.Random(seed)
    out: list[SyllogismInstance] = []
    while len(out) < n_samples:
        triple = rng.sample(LETTERS, 3)
        for s, m, p in itertools.permutations(triple):
            if len(out) == n_samples:
                break
            out.append(render(scheme, s, m, m, p, tokenizer=tokenizer))
    return out


def _default_pool(instance: SyllogismInstance) -> tuple[str, ...]:
    used = set(instance.terms.values())
    if used <= set(LETTERS):
        return LETTERS
    if used <= set(DIGITS):
        return DIGITS
    raise DatasetError("word-valued instances need an explicit replacement pool")


def corrupt(
    instance: SyllogismInstance,
    intervention: str,
    seed: int = 0,
    *,
    pool: Sequence[str] | None = None,
    tokenizer: BPETokenizer | None = None,
) -> PromptPair:
    """Build a position-aligned corrupted copy of ``instance``.

    Replacements come from ``pool`` (the 26 letters by default) minus every term
    already present in the instance. The pair is always scored against the
    clean answer and distractor.
    """
    if intervention not in INTERVENTIONS:
        raise DatasetError(f"unknown intervention {intervention!r}; expected one of {INTERVENTIONS}")
    pool = tuple(pool) if pool is not None else _default_pool(instance)
    reserved = set(instance.terms.values()) | {instance.answer, instance.distractor}
    fresh = sorted(set(pool) - reserved, key=pool.index)
    roles = EDITED_ROLES[intervention]
    n_needed = 1 if intervention != "all_term" else 4
    if len(fresh) < n_needed:
        raise DatasetError(f"replacement pool exhausted: need {n_needed}, have {len(fresh)}")
    picks = random.Random(seed).sample(fresh, n_needed)
    terms = instance.terms
    if intervention == "all_term":
        terms.update(zip(roles, picks))
    else:
        terms[roles[0]] = picks[0]
    corrupted = render(
        instance.scheme,
        terms["s"],
        terms["m1"],
        terms["m2"],
        terms["p"],
        answer=instance.answer,
        distractor=instance.distractor,
        label=instance.label,
        tokenizer=tokenizer,
    )
    allowed = {pos for role in roles for pos in instance.positions(role)}
    if len(corrupted.tokens) != len(instance.tokens):
        raise DatasetError("corruption changed the token length")
    changed = {i for i, (a, b) in enumerate(zip(instance.tokens, corrupted.tokens)) if a != b}
    if not changed <= allowed:
        raise DatasetError(f"corruption touched positions {sorted(changed - allowed)} outside {roles}")
    return PromptPair(instance, corrupted, intervention, roles)


def corrupt_all(
    instances: Sequence[SyllogismInstance],
    intervention: str,
    seed: int = 0,
    *,
    pool: Sequence[str] | None = None,
    tokenizer: BPETokenizer | None = None,
) -> list[PromptPair]:
    """Corrupt a batch; per-instance seeds are drawn from one seeded stream."""
    rng = random.Random(seed)
    return [
        corrupt(inst, intervention, rng.getrandbits(32), pool=pool, tokenizer=tokenizer)
        for inst in instances
    ]


def perturb(
    instance: SyllogismInstance,
    kind: str,
    *,
    digits: Sequence[str] | None = None,
    tokenizer: BPETokenizer | None = None,
) -> SyllogismInstance:
    """Rewrite surface forms while keeping the role structure.

    ``numeric`` maps the i-th distinct term (in s, m1, m2, p, answer, distractor
    order) to ``digits[i]``, by default ``" 1"``, ``" 2"``, ... ``quantifier``
    swaps ``All X are`` for ``Each X is`` in every clause that has it.
    """
    if kind == "numeric":
        order = [instance.s, instance.m1, instance.m2, instance.p, instance.answer, instance.distractor]
        distinct = list(dict.fromkeys(order))
        digits = list(digits) if digits is not None else [f" {i + 1}" for i in range(len(distinct))]
        if len(set(digits)) < len(distinct):
            raise DatasetError(f"numeric perturbation needs {len(distinct)} distinct digits, got {len(set(digits))}")
        mapping = dict(zip(distinct, dict.fromkeys(digits)))
        return render(
            instance.scheme,
            mapping[instance.s],
            mapping[instance.m1],
            mapping[instance.m2],
            mapping[instance.p],
            answer=mapping[instance.answer],
            distractor=mapping[instance.distractor],
            label=instance.label,
            tokenizer=tokenizer,
        )
    if kind == "quantifier":
        if instance.scheme.variant == "quantifier":
            return instance
        return render(
            quantifier_variant(instance.scheme),
            instance.s,
            instance.m1,
            instance.m2,
            instance.p,
            answer=instance.answer,
            distractor=instance.distractor,
            label=instance.label,
            tokenizer=tokenizer,
        )
    raise DatasetError(f"unknown perturbation {kind!r}; expected 'numeric' or 'quantifier'")


def perturb_all(
    instances: Sequence[SyllogismInstance],
    kind: str,
    seed: int = 0,
    *,
    tokenizer: BPETokenizer | None = None,
) -> list[SyllogismInstance]:
    """Perturb a dataset. Numeric digits are a fresh seeded permutation per instance.

    A fixed mapping would send every letter triple to the same digit prompt.
    """
    rng = random.Random(seed)
    out = []
    for inst in instances:
        digits = rng.sample(DIGITS, len(DIGITS)) if kind == "numeric" else None
        out.append(perturb(inst, kind, digits=digits, tokenizer=tokenizer))
    return out


@dataclass
class IngestResult:
    instances: list[SyllogismInstance] = field(default_factory=list)
    rejected: list[tuple[int, dict, str]] = field(default_factory=list)


def ingest_nonsymbolic(
    path: str | Path,
    scheme: SyllogisticScheme | str = "AAA-1",
    *,
    tokenizer: BPETokenizer | None = None,
) -> IngestResult:
    """Read ``s,m,p,label`` rows of plain words and render them.

    Words may be written bare; they are space-prefixed before encoding. Rows
    whose words are not single tokens are collected in ``rejected`` with the
    line number and reason. Structurally broken rows raise ``DatasetError``.
    """
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    tok = tokenizer or gpt2_tokenizer()
    result = IngestResult()
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["s", "m", "p", "label"]:
            raise DatasetError(f"{path}: header must be exactly 's,m,p,label', got {header}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            s, m, p, label = (cell.strip() for cell in row)
            record = {"s": s, "m": m, "p": p, "label": label}
            if not all((s, m, p)) or any(" " in w for w in (s, m, p)):
                raise DatasetError(f"{path}:{lineno}: terms must be non-empty single words")
            if label not in LABELS:
                raise DatasetError(f"{path}:{lineno}: label must be one of {LABELS}, got {label!r}")
            words = [" " + w for w in (s, m, p)]
            multi = [w.strip() for w in words if not tok.is_single_token(w)]
            if multi:
                result.rejected.append((lineno, record, f"multi-token: {', '.join(multi)}"))
                continue
            if len(set(words)) != 3:
                result.rejected.append((lineno, record, "terms must be distinct"))
                continue
            result.instances.append(
                render(scheme, words[0], words[1], words[1], words[2], label=label, tokenizer=tok)
            )
    return result


def bundled_nonsymbolic_path() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "nonsymbolic_sample.csv"


def dataset_summary(instances: Sequence[SyllogismInstance]) -> dict:
    """Sample count, token lengths and unique-term counts per role."""
    return {
        "n_samples": len(instances),
        "token_lengths": sorted({len(i.tokens) for i in instances}),
        "unique_s": len({i.s for i in instances}),
        "unique_m": len({i.m1 for i in instances} | {i.m2 for i in instances}),
        "unique_p": len({i.p for i in instances}),
    }
