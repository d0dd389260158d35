"""Syllogism schemes, symbolic and non-symbolic instances, corruptions."""

from .generate import (
    DIGITS,
    EDITED_ROLES,
    LETTERS,
    IngestResult,
    bundled_nonsymbolic_path,
    corrupt,
    corrupt_all,
    dataset_summary,
    generate_symbolic,
    ingest_nonsymbolic,
    perturb,
    perturb_all,
)
from .instances import (
    INTERVENTIONS,
    ROLES,
    PromptPair,
    SyllogismInstance,
    dumps_jsonl,
    load_jsonl,
    render,
    save_jsonl,
)
from .schemes import SCHEMES, SyllogisticScheme, get_scheme, quantifier_variant

__all__ = [
    "DIGITS",
    "EDITED_ROLES",
    "INTERVENTIONS",
    "LETTERS",
    "ROLES",
    "SCHEMES",
    "IngestResult",
    "PromptPair",
    "SyllogismInstance",
    "SyllogisticScheme",
    "bundled_nonsymbolic_path",
    "corrupt",
    "corrupt_all",
    "dataset_summary",
    "dumps_jsonl",
    "generate_symbolic",
    "get_scheme",
    "ingest_nonsymbolic",
    "load_jsonl",
    "perturb",
    "perturb_all",
    "quantifier_variant",
    "render",
    "save_jsonl",
]
