import numpy as np
import pytest

from adaptive_watermark.datasets import make_synthetic_corpus
from adaptive_watermark.lm import Corpus, train_ngram
from adaptive_watermark.semantics import SemanticMapper, SentenceEmbedder


class Models:
    """Corpus split plus the three n-gram roles and a trained mapper."""

    def __init__(self, n_docs, epochs, seed=0):
        docs = make_synthetic_corpus(n_docs, seed=seed)
        self.corpus = Corpus.from_texts(docs)
        self.train, self.held = self.corpus.split(0.2)
        self.vocab = self.corpus.vocabulary
        self.lm = train_ngram(self.train, 3, 0.01)
        self.mm = train_ngram(self.train, 2, 0.01, "measurement")
        self.evaluator = train_ngram(self.held, 3, 0.01, "evaluator")
        self.embedder = SentenceEmbedder(self.vocab.size, 64, seed=1, window=16).fit()
        self.mapper = SemanticMapper(self.embedder, epochs=epochs, span_length=(8, 16), seed=2).fit(self.train)

    def prompts(self, n=200, length=10, offset=20):
        docs = [d for d in self.held.documents if d.size >= length]
        return [d[:length] for d in docs[offset:offset + n]]

    def opening(self, i=0, length=20):
        return tuple(int(t) for t in self.held.documents[i][:length])


@pytest.fixture(scope="session")
def small():
    """Quick models for unit tests (a few seconds to build)."""
    return Models(400, epochs=3)


@pytest.fixture(scope="session")
def desk():
    """Desk-scale models shared by the acceptance suite."""
    return Models(3000, epochs=20)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


CLI_CONFIG = """\
[global]
seed = 7

[paths]
corpus = corpus.txt
models = models
out = out
opening_sentence_file = opening.txt

[experiment]
n_per_class = 20
length = 120
seeds = 0
"""


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """Corpus, config and trained models produced through the CLI."""
    import os

    from adaptive_watermark.cli import main

    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.ini").write_text(CLI_CONFIG)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        assert main(["make-corpus", "corpus.txt", "--config", "cfg.ini"]) == 0
        held = (root / "corpus.txt").read_text().splitlines()[4]
        (root / "opening.txt").write_text(" ".join(held.split()[:20]) + "\n")
        assert main(["train-lm", "--config", "cfg.ini"]) == 0
        assert main(["train-mapper", "--config", "cfg.ini"]) == 0
    finally:
        os.chdir(cwd)
    return root


@pytest.fixture
def in_workspace(cli_workspace, monkeypatch):
    monkeypatch.chdir(cli_workspace)
    return cli_workspace


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)
