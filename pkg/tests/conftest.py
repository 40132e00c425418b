from pathlib import Path

import pytest

from rfcfuzz import evaluation

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
GRAMMARS = CORPUS / "grammars"


@pytest.fixture(scope="session")
def corpus_root() -> Path:
    return CORPUS


@pytest.fixture(scope="session")
def entries():
    return evaluation.load_corpus(CORPUS)


@pytest.fixture(scope="session")
def entry_by_id(entries):
    return {e.protocol_id: e for e in entries}


@pytest.fixture(scope="session")
def models_without(entries):
    """Models trained on every corpus protocol except the named one (cached)."""
    cache = {}

    def get(protocol: str):
        if protocol not in cache:
            rest = [e for e in entries if e.protocol_id != protocol]
            cache[protocol] = evaluation.train_models(rest, seed=0)
        return cache[protocol]

    return get


def write_rfc(tmp_path: Path, text: str, name: str = "toy.txt") -> Path:
    path = tmp_path / name
    path.write_text(text)
    return path


# acceptance results, filled in by test_acceptance.py and echoed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
