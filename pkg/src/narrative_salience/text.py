"""Word-level tokenization, sentence spans and the corpus record types."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, UNK, MASK, BOS = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[MASK]", "[BOS]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace, with each punctuation mark its own token."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.itos: list[str] = list(tokens)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(w, UNK) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Ids follow first-occurrence order of tokens that reach ``min_count``."""
    counts: Counter[str] = Counter()
    order: list[str] = []
    seen_any = False
    for text in corpus:
        seen_any = True
        for w in split_words(text):
            if w not in counts:
                order.append(w)
            counts[w] += 1
    if not seen_any:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [w for w in order if counts[w] >= min_count and w not in SPECIAL_TOKENS]
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


@dataclass(frozen=True)
class Story:
    """A tokenized story. ``token_ids[0]`` is BOS; ``spans`` are inclusive
    1-based token ranges, one per sentence, that tile ``1..N``."""

    id: str
    sentences: tuple[str, ...]
    token_ids: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def n_tokens(self) -> int:
        """Content tokens, BOS excluded."""
        return len(self.token_ids) - 1

    def sentence_ids(self, i: int) -> tuple[int, ...]:
        """Token ids of sentence ``i`` (0-based sentence index)."""
        j, k = self.spans[i]
        return self.token_ids[j : k + 1]


def tokenize_story(sentences: Sequence[str], vocab: Vocabulary, story_id: str = "") -> Story:
    if not sentences:
        raise ValueError(f"story {story_id!r} has no sentences")
    ids = [BOS]
    spans = []
    for i, sent in enumerate(sentences):
        words = split_words(sent)
        if not words:
            raise ValueError(f"story {story_id!r}: sentence {i + 1} is empty")
        j = len(ids)
        ids.extend(vocab.encode(words))
        spans.append((j, len(ids) - 1))
    return Story(story_id, tuple(sentences), tuple(ids), tuple(spans))


def story_from_sentence_ids(story_id: str, sentences: Sequence[str], per_sentence: Sequence[Sequence[int]]) -> Story:
    """Assemble a Story from already-encoded sentences (used for reordered variants)."""
    ids = [BOS]
    spans = []
    for s in per_sentence:
        j = len(ids)
        ids.extend(s)
        spans.append((j, len(ids) - 1))
    return Story(story_id, tuple(sentences), tuple(ids), tuple(spans))


@dataclass(frozen=True)
class TrainingExample:
    """Sentence-level corpus record; tokenized against a vocabulary at training time."""

    id: str
    anchor: tuple[str, ...]
    twin: tuple[str, ...] | None = None
    distractor: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TurningPoint:
    tp: int
    sentence: int  # 1-based


@dataclass(frozen=True)
class SalienceLabels:
    id: str
    counts: tuple[int, ...]
    turning_points: tuple[TurningPoint, ...] | None = None

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError(f"labels {self.id!r}: counts must be non-negative")
        for tp in self.turning_points or ():
            if not 1 <= tp.tp <= 5:
                raise ValueError(f"labels {self.id!r}: turning point type {tp.tp} outside 1..5")
            if not 1 <= tp.sentence <= len(self.counts):
                raise ValueError(f"labels {self.id!r}: turning point sentence {tp.sentence} out of range")

    @property
    def relevant(self) -> list[bool]:
        return [c > 0 for c in self.counts]

    @property
    def top_sentence(self) -> int:
        """1-based index of the most-selected sentence (first on ties)."""
        return max(range(len(self.counts)), key=lambda i: (self.counts[i], -i)) + 1
