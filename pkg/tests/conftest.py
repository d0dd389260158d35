from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from syllogistic.model import ModelBundle, ModelConfig, gpt2_tokenizer  # noqa: E402

TOY_CONFIG = ModelConfig(
    n_layers=2, n_heads=2, d_model=16, d_head=8, d_mlp=64, vocab_size=50257, max_positions=32
)


@pytest.fixture(scope="session")
def tokenizer():
    return gpt2_tokenizer()


@pytest.fixture(scope="session")
def toy_bundle(tokenizer):
    return ModelBundle.random(TOY_CONFIG, seed=0, tokenizer=tokenizer)


@pytest.fixture(scope="session")
def naive(toy_bundle):
    from oracle import NaiveGPT2

    return NaiveGPT2(toy_bundle)


# Acceptance bookkeeping: one pass/fail line per criterion in the terminal summary.
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "PASS" if report.outcome == "passed" else "FAIL"
        if number not in _CRITERIA or outcome == "FAIL":
            _CRITERIA[number] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome = _CRITERIA[number]
        terminalreporter.write_line(f"[{outcome}] criterion {number}: {title}")
