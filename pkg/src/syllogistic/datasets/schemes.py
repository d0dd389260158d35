"""The 15 unconditionally valid categorical syllogisms.

Templates use ``{s}``, ``{m}`` and ``{p}`` slots, each preceded by a space; the
minor premise (holding s and m) comes first, then the major premise (m and p).
The conclusion template always ends with `` {p}.``; the prompt stops right
before that slot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from ..errors import DatasetError

SLOT = re.compile(r" \{(s|m|p)\}")


@dataclass(frozen=True)
class SyllogisticScheme:
    name: str
    mood: str
    figure: int
    premise_templates: tuple[str, str]
    conclusion_template: str
    answer_role: str = "p"
    distractor_role: str = "m"
    variant: str = "plain"

    @property
    def code(self) -> str:
        return f"{self.mood}-{self.figure}"

    def __post_init__(self):
        minor, major = self.premise_templates
        if SLOT.findall(minor).count("m") != 1 or SLOT.findall(major).count("m") != 1:
            raise DatasetError(f"{self.name}: each premise needs exactly one middle-term slot")
        if "s" not in SLOT.findall(minor) or "p" not in SLOT.findall(major):
            raise DatasetError(f"{self.name}: minor premise must hold s, major premise p")
        if not self.conclusion_template.endswith(" {p}."):
            raise DatasetError(f"{self.name}: conclusion must end with the predicate slot")


def _scheme(name, mood, figure, minor, major, conclusion) -> SyllogisticScheme:
    return SyllogisticScheme(name, mood, figure, (minor, major), conclusion)


SCHEMES: tuple[SyllogisticScheme, ...] = (
    _scheme("Barbara", "AAA", 1, "All {s} are {m}.", "All {m} are {p}.", "All {s} are {p}."),
    _scheme("Celarent", "EAE", 1, "All {s} are {m}.", "No {m} are {p}.", "No {s} are {p}."),
    _scheme("Darii", "AII", 1, "Some {s} are {m}.", "All {m} are {p}.", "Some {s} are {p}."),
    _scheme("Ferio", "EIO", 1, "Some {s} are {m}.", "No {m} are {p}.", "Some {s} are not {p}."),
    _scheme("Camestres", "AEE", 2, "No {s} are {m}.", "All {p} are {m}.", "No {s} are {p}."),
    _scheme("Cesare", "EAE", 2, "All {s} are {m}.", "No {p} are {m}.", "No {s} are {p}."),
    _scheme("Baroco", "AOO", 2, "Some {s} are not {m}.", "All {p} are {m}.", "Some {s} are not {p}."),
    _scheme("Festino", "EIO", 2, "Some {s} are {m}.", "No {p} are {m}.", "Some {s} are not {p}."),
    _scheme("Disamis", "IAI", 3, "All {m} are {s}.", "Some {m} are {p}.", "Some {s} are {p}."),
    _scheme("Datisi", "AII", 3, "Some {m} are {s}.", "All {m} are {p}.", "Some {s} are {p}."),
    _scheme("Ferison", "EIO", 3, "Some {m} are {s}.", "No {m} are {p}.", "Some {s} are not {p}."),
    _scheme("Bokardo", "OAO", 3, "All {m} are {s}.", "Some {m} are not {p}.", "Some {s} are not {p}."),
    _scheme("Dimaris", "IAI", 4, "All {m} are {s}.", "Some {p} are {m}.", "Some {s} are {p}."),
    _scheme("Camenes", "AEE", 4, "No {m} are {s}.", "All {p} are {m}.", "No {s} are {p}."),
    _scheme("Fresison", "EIO", 4, "Some {m} are {s}.", "No {p} are {m}.", "Some {s} are not {p}."),
)

_ALIASES = {"bocardo": "Bokardo"}


def get_scheme(key: str) -> SyllogisticScheme:
    """Look up a scheme by traditional name (``Barbara``) or mood-figure code (``AAA-1``)."""
    k = key.strip()
    k = _ALIASES.get(k.lower(), k)
    for scheme in SCHEMES:
        if k.lower() == scheme.name.lower() or k.upper() == scheme.code:
            return scheme
    raise DatasetError(f"unknown syllogistic scheme {key!r}")


_ALL_CLAUSE = re.compile(r"\bAll (\{[smp]\}) are\b")


def quantifier_variant(scheme: SyllogisticScheme) -> SyllogisticScheme:
    """Rewrite universal-affirmative clauses ``All X are`` as ``Each X is``."""
    premises = tuple(_ALL_CLAUSE.sub(r"Each \1 is", t) for t in scheme.premise_templates)
    conclusion = _ALL_CLAUSE.sub(r"Each \1 is", scheme.conclusion_template)
    if premises == scheme.premise_templates and conclusion == scheme.conclusion_template:
        raise DatasetError(f"{scheme.name} has no 'All ... are' clause to rewrite")
    return replace(scheme, premise_templates=premises, conclusion_template=conclusion, variant="quantifier")
