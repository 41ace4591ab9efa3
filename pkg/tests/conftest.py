import numpy as np
import pytest

from clickintent.domain import Corpus, Label, SymbolizedSession


def labeled(symbols, label, sid=None):
    label = Label(label) if isinstance(label, str) else label
    return SymbolizedSession(sid or "-".join(map(str, symbols)) + label.value, tuple(symbols), label)


def make_corpus(train, validation=None, test=None):
    return Corpus(list(train), list(validation or []), list(test or []))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
