"""Syllogism instances and their token-level rendering."""

from __future__ import annotations

import json
from pathlib import Path
from dataclasses import dataclass, field
from typing import Mapping

from ..errors import DatasetError
from ..model.tokenizer import BPETokenizer, gpt2_tokenizer
from .schemes import SLOT, SyllogisticScheme, get_scheme, quantifier_variant

ROLES = ("s", "m1", "m2", "p")
INTERVENTIONS = ("middle_term", "all_term", "subject_term")


def _check_term(term: str, tokenizer: BPETokenizer) -> int:
    if not term.startswith(" ") or term.strip() != term[1:] or not term[1:]:
        raise DatasetError(f"term {term!r} must be a single space-prefixed word like ' A'")
    try:
        return tokenizer.token_id(term)
    except ValueError:
        raise DatasetError(f"term {term!r} is not a single token") from None


def _lower_first(text: str) -> str:
    return text[:1].lower() + text[1:]


@dataclass(frozen=True)
class SyllogismInstance:
    scheme: SyllogisticScheme
    s: str
    m1: str
    m2: str
    p: str
    answer: str
    distractor: str
    prompt: str
    tokens: tuple[int, ...]
    role_positions: Mapping[str, object]
    answer_token: int
    distractor_token: int
    label: str = "symbolic"

    @property
    def terms(self) -> dict[str, str]:
        return {"s": self.s, "m1": self.m1, "m2": self.m2, "p": self.p}

    def positions(self, role: str) -> tuple[int, ...]:
        """All token positions of a role, always as a tuple."""
        pos = self.role_positions[role]
        return tuple(pos) if isinstance(pos, tuple) else (pos,)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.code,
            "variant": self.scheme.variant,
            "s": self.s,
            "m1": self.m1,
            "m2": self.m2,
            "p": self.p,
            "answer": self.answer,
            "distractor": self.distractor,
            "prompt": self.prompt,
            "tokens": list(self.tokens),
            "role_positions": {k: list(v) if isinstance(v, tuple) else v for k, v in self.role_positions.items()},
            "answer_token": self.answer_token,
            "distractor_token": self.distractor_token,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: Mapping, tokenizer: BPETokenizer | None = None) -> "SyllogismInstance":
        """Re-render from the stored terms and check the stored tokens still agree."""
        try:
            scheme = get_scheme(data["scheme"])
            if data.get("variant", "plain") == "quantifier":
                scheme = quantifier_variant(scheme)
            inst = render(
                scheme,
                data["s"],
                data["m1"],
                data["m2"],
                data["p"],
                answer=data["answer"],
                distractor=data["distractor"],
                label=data.get("label", "symbolic"),
                tokenizer=tokenizer,
            )
        except KeyError as exc:
            raise DatasetError(f"instance record is missing field {exc}") from None
        if list(inst.tokens) != list(data.get("tokens", inst.tokens)):
            raise DatasetError(f"stored tokens disagree with re-encoding of {inst.prompt!r}")
        return inst


@dataclass(frozen=True)
class PromptPair:
    clean: SyllogismInstance
    corrupted: SyllogismInstance
    intervention: str
    edited_roles: tuple[str, ...] = field(default=())

    @property
    def answer_token(self) -> int:
        return self.clean.answer_token

    @property
    def distractor_token(self) -> int:
        return self.clean.distractor_token


def render(
    scheme: SyllogisticScheme,
    s: str,
    m1: str,
    m2: str,
    p: str,
    *,
    answer: str | None = None,
    distractor: str | None = None,
    label: str = "symbolic",
    tokenizer: BPETokenizer | None = None,
) -> SyllogismInstance:
    """Fill a scheme's templates and encode the prompt segment by segment.

    ``answer`` and ``distractor`` default to the scheme's roles (p and m1). Each
    literal piece and each term is encoded on its own so term positions are
    known exactly; the concatenation is then checked against a full re-encode.
    """
    tok = tokenizer or gpt2_tokenizer()
    ids = {role: _check_term(term, tok) for role, term in zip(ROLES, (s, m1, m2, p))}
    terms = {"s": s, "m1": m1, "m2": m2, "p": p}
    answer = p if answer is None else answer
    distractor = m1 if distractor is None else distractor
    answer_token = _check_term(answer, tok)
    distractor_token = _check_term(distractor, tok)
    if answer_token == distractor_token:
        raise DatasetError("answer and distractor must be different tokens")

    minor, major = scheme.premise_templates
    conclusion = "Therefore, " + _lower_first(scheme.conclusion_template[: -len(" {p}.")])
    pieces = [(minor, "m1"), (" " + major, "m2"), (" " + conclusion, None)]

    tokens: list[int] = []
    text: list[str] = []
    positions: dict[str, list[int]] = {r: [] for r in ROLES}
    for template, middle in pieces:
        cursor = 0
        for match in SLOT.finditer(template):
            literal = template[cursor : match.start()]
            tokens.extend(tok.encode(literal))
            text.append(literal)
            role = middle if match.group(1) == "m" else match.group(1)
            term = terms[role]
            positions[role].append(len(tokens))
            tokens.append(ids[role])
            text.append(term)
            cursor = match.end()
        tail = template[cursor:]
        tokens.extend(tok.encode(tail))
        text.append(tail)

    prompt = "".join(text)
    if tok.encode(prompt) != tokens:
        raise DatasetError(f"segment-wise encoding of {prompt!r} disagrees with a full re-encode")
    role_positions: dict[str, object] = {"s": tuple(positions["s"])}
    for role in ("m1", "m2", "p"):
        if len(positions[role]) != 1:
            raise DatasetError(f"{scheme.name}: role {role} must appear exactly once")
        role_positions[role] = positions[role][0]
    role_positions["last"] = len(tokens) - 1
    return SyllogismInstance(
        scheme=scheme,
        s=s,
        m1=m1,
        m2=m2,
        p=p,
        answer=answer,
        distractor=distractor,
        prompt=prompt,
        tokens=tuple(tokens),
        role_positions=role_positions,
        answer_token=answer_token,
        distractor_token=distractor_token,
        label=label,
    )


def save_jsonl(instances, path) -> None:
    Path(path).write_text(dumps_jsonl(instances), encoding="utf-8")


def dumps_jsonl(instances) -> str:
    return "".join(json.dumps(inst.to_dict(), sort_keys=True) + "\n" for inst in instances)


def load_jsonl(path, tokenizer: BPETokenizer | None = None) -> list[SyllogismInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                out.append(SyllogismInstance.from_dict(record, tokenizer))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return out
