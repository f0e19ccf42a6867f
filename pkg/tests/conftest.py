from __future__ import annotations

import numpy as np
import pytest

from knnmt.corpus import synthetic_corpus
from knnmt.toymodel import toy_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(120, src_vocab=200, tgt_vocab=200, min_len=3, max_len=9, seed=7)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    return toy_model(small_corpus.src_vocab, small_corpus.tgt_vocab, dim=32, seed=3, corpus=small_corpus)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
