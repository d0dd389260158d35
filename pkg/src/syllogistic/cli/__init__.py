"""``syllogistic`` command line: one verb per experiment, flags override the config file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import DatasetError, InterventionError, MetricError, ModelError
from .commands import COMMANDS, PERTURBATIONS, SWEEPS
from .config import CHECKPOINT_ENV, ExperimentConfig, UsageError, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3

HELP = {
    "generate": "write a symbolic dataset as JSON lines and print its summary",
    "run": "completion accuracy and mean logit difference",
    "sweep": "activation-patching sweeps and attention profiles",
    "path-patch": "path patching into a receiver head",
    "lens": "OV-circuit logit lens over the letter tokens",
    "ablate": "necessity and sufficiency curves of a circuit",
    "movers": "classify mover heads from role-scoped value patching",
    "subject-bias": "degradation under subject-term corruption, symbolic vs non-symbolic",
    "report": "C1-C3 verdicts per scheme",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--checkpoint", help=f"model file or folder (default ${CHECKPOINT_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", help="scheme name or code, e.g. AAA-1 or Barbara")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--dataset", help="JSON-lines dataset from `generate`")
    p.add_argument("--nonsymbolic", help="s,m,p,label CSV, or 'bundled'")
    p.add_argument("--perturb", action="append", choices=PERTURBATIONS)
    p.add_argument("--intervention", choices=("middle_term", "all_term", "subject_term"))
    p.add_argument("--direction", choices=("denoise", "noise"))
    p.add_argument("--output", "-o", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--heatmap", action="store_true", default=None, help="also write PPM heatmaps")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="syllogistic", description="Circuit experiments on syllogistic completion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    verbs = {name: sub.add_parser(name, help=text, description=text) for name, text in HELP.items()}
    for p in verbs.values():
        _common(p)
    verbs["sweep"].add_argument("--sweep", action="append", choices=SWEEPS)
    verbs["sweep"].add_argument("--query-role", dest="query_role")
    verbs["path-patch"].add_argument("--receiver", help="receiver head, e.g. 11.10")
    verbs["path-patch"].add_argument("--sender", help="single sender; omit to sweep all earlier heads")
    verbs["lens"].add_argument("--heads", nargs="+")
    for name in ("ablate", "report"):
        verbs[name].add_argument("--circuit", help="JSON circuit file; default is the built-in circuit")
        verbs[name].add_argument("--necessity-fraction", dest="necessity_fraction", type=float)
        verbs[name].add_argument("--sufficiency-fraction", dest="sufficiency_fraction", type=float)
    verbs["report"].add_argument("--schemes", nargs="+")
    return parser


_CONFIG_KEYS = set(ExperimentConfig.__dataclass_fields__)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
        config = load_config(args.config, overrides)
        return COMMANDS[args.command](config)
    except (UsageError, InterventionError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        print(f"hint: pass --checkpoint DIR or set {CHECKPOINT_ENV} to a GPT-2 safetensors folder", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


__all__ = ["EXIT_DATA", "EXIT_MODEL", "EXIT_OK", "EXIT_USAGE", "build_parser", "main"]
