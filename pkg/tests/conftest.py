import numpy as np
import pytest

from narrative_salience.encoder import Encoder, EncoderConfig
from narrative_salience.text import build_vocab, tokenize_story

ACCEPTANCE_LINES: list[str] = []

WORDS = "the cat dog sat ran on a mat log hat big red fox jumped over lazy sun moon star".split()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocab():
    return build_vocab([" ".join(WORDS) + " . !"])


@pytest.fixture(scope="session")
def small_encoder(vocab):
    cfg = EncoderConfig(vocab_size=len(vocab), dim=16, layers=2, heads=2, ff_dim=32, max_len=128, dropout=0.1)
    return Encoder.init(cfg, seed=7)


def random_sentences(rng: np.random.Generator, n: int, lo: int = 2, hi: int = 6) -> list[str]:
    return [" ".join(rng.choice(WORDS, size=rng.integers(lo, hi + 1))) + " ." for _ in range(n)]


@pytest.fixture
def make_story(vocab):
    def _make(sentences, sid="s"):
        return tokenize_story(sentences, vocab, sid)

    return _make
