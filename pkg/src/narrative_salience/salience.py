"""Sentence salience from story embeddings: deletion, shifting, disruption and
summarization, at story level and per window.

All four scores are oriented so that larger means more salient. The encoder
argument needs ``encode_many(seqs) -> list[array]`` and ``cfg.pooling``; each
sequence passed to ``encode_many`` counts as one encoder call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .encoder import check_partition, cosine_similarity, pool_sequence
from .text import BOS, Story

OPERATIONS = ("deletion", "shifting", "disruption", "summarization")


def _mode(encoder) -> str:
    return encoder.cfg.pooling


def _assemble(story: Story, order: Sequence[int]) -> tuple[list[int], dict[int, tuple[int, int]]]:
    """Token sequence for the sentences in ``order`` (0-based indices) and the
    new inclusive token range of each included sentence."""
    ids = [BOS]
    where = {}
    for i in order:
        j = len(ids)
        ids.extend(story.sentence_ids(i))
        where[i] = (j, len(ids) - 1)
    return ids, where


def _need_two(story: Story, op: str) -> None:
    if story.n_sentences < 2:
        raise ValueError(f"{op} needs at least two sentences; story {story.id!r} has {story.n_sentences}")


def shift_orders(n: int, i: int, include_end: bool = True) -> list[tuple[int, ...]]:
    """Distinct orders with sentence ``i`` moved directly before each other
    sentence t (and, if ``include_end``, to the very end). Orders equal to the
    original are dropped."""
    rest = [s for s in range(n) if s != i]
    original = tuple(range(n))
    seen, out = set(), []
    targets = [t for t in range(n) if t != i] + ([None] if include_end else [])
    for t in targets:
        if t is None:
            order = tuple(rest + [i])
        else:
            pos = rest.index(t)
            order = tuple(rest[:pos] + [i] + rest[pos:])
        if order != original and order not in seen:
            seen.add(order)
            out.append(order)
    return out


def score_deletion(story: Story, encoder) -> list[float]:
    _need_two(story, "deletion")
    n, mode = story.n_sentences, _mode(encoder)
    seqs = [list(story.token_ids)]
    for i in range(n):
        seqs.append(_assemble(story, [s for s in range(n) if s != i])[0])
    embs = [pool_sequence(h, mode) for h in encoder.encode_many(seqs)]
    return [1.0 - cosine_similarity(embs[0], e) for e in embs[1:]]


def score_shifting(story: Story, encoder, include_end: bool = True) -> list[float]:
    _need_two(story, "shifting")
    n, mode = story.n_sentences, _mode(encoder)
    per_sentence = [shift_orders(n, i, include_end) for i in range(n)]
    seqs = [list(story.token_ids)]
    for orders in per_sentence:
        seqs.extend(_assemble(story, o)[0] for o in orders)
    embs = [pool_sequence(h, mode) for h in encoder.encode_many(seqs)]
    base, cursor, scores = embs[0], 1, []
    for orders in per_sentence:
        z = len(orders)
        sims = [cosine_similarity(base, e) for e in embs[cursor : cursor + z]]
        cursor += z
        scores.append(1.0 - float(np.mean(sims)) if z else 0.0)
    return scores


def score_disruption(story: Story, encoder) -> list[float]:
    """``1 - cos(f(x_1:k), f(x_1:j-1))``; the first sentence is compared with the BOS-only prefix."""
    mode = _mode(encoder)
    seqs = []
    for j, k in story.spans:
        seqs.append(list(story.token_ids[: k + 1]))
        seqs.append(list(story.token_ids[:j]))
    embs = [pool_sequence(h, mode) for h in encoder.encode_many(seqs)]
    return [1.0 - cosine_similarity(embs[2 * i], embs[2 * i + 1]) for i in range(story.n_sentences)]


def standalone_sequences(story: Story) -> list[list[int]]:
    return [[BOS, *story.sentence_ids(i)] for i in range(story.n_sentences)]


def score_summarization(story: Story, encoder, contextual: bool = False) -> list[float]:
    """``cos(f(x), f(sentence))``. The sentence is encoded on its own (with BOS,
    pooled over its tokens) unless ``contextual``, in which case its span is
    pooled from the full-story pass."""
    mode = _mode(encoder)
    if contextual:
        h = encoder.encode_many([list(story.token_ids)])[0]
        full = pool_sequence(h, mode)
        return [cosine_similarity(full, h[j : k + 1].mean(axis=0)) for j, k in story.spans]
    outs = encoder.encode_many([list(story.token_ids)] + standalone_sequences(story))
    full = pool_sequence(outs[0], mode)
    return [cosine_similarity(full, pool_sequence(h, mode)) for h in outs[1:]]


# -- window level ------------------------------------------------------------


def _window_of(partition, n: int) -> list[int]:
    owner = [0] * n
    for w, (s, e) in enumerate(partition):
        for i in range(s - 1, e):
            owner[i] = w
    return owner


def _pool_positions(h: np.ndarray, positions: list[int]) -> np.ndarray:
    if positions:
        return h[positions].mean(axis=0)
    # nothing of the window survived: fall back to the whole (truncated) sequence
    return pool_sequence(h, "mean")


def _window_positions(where: dict[int, tuple[int, int]], members: Sequence[int]) -> list[int]:
    out = []
    for i in members:
        if i in where:
            j, k = where[i]
            out.extend(range(j, k + 1))
    return sorted(out)


def score_windowed(story: Story, partition, encoder, operation: str, include_end: bool = True) -> list[float]:
    """Per-sentence scores where embeddings are window-``w`` pools of full-story
    passes, ``w`` being the window holding the sentence. Windows use mean pooling."""
    if operation not in OPERATIONS:
        raise ValueError(f"unknown operation {operation!r}")
    n = story.n_sentences
    partition = tuple(tuple(w) for w in partition)
    check_partition(partition, n)
    owner = _window_of(partition, n)
    members = [list(range(s - 1, e)) for s, e in partition]
    natural = list(range(n))
    base_ids, base_where = _assemble(story, natural)

    if operation == "summarization":
        outs = encoder.encode_many([base_ids] + standalone_sequences(story))
        h = outs[0]
        win = [h[_window_positions(base_where, m)].mean(axis=0) for m in members]
        return [cosine_similarity(win[owner[i]], pool_sequence(outs[1 + i], "mean")) for i in range(n)]

    if operation == "deletion":
        _need_two(story, "deletion")
        variants = [[s for s in natural if s != i] for i in natural]
        seqs, wheres = [base_ids], [base_where]
        for order in variants:
            ids, where = _assemble(story, order)
            seqs.append(ids)
            wheres.append(where)
        outs = encoder.encode_many(seqs)
        base = [_pool_positions(outs[0], _window_positions(base_where, m)) for m in members]
        scores = []
        for i in natural:
            w = owner[i]
            e = _pool_positions(outs[1 + i], _window_positions(wheres[1 + i], members[w]))
            scores.append(1.0 - cosine_similarity(base[w], e))
        return scores

    if operation == "shifting":
        _need_two(story, "shifting")
        per_sentence = []
        for i in natural:
            w = owner[i]
            per_sentence.append(_window_shift_orders(n, i, members[w], include_end))
        seqs, wheres = [base_ids], [base_where]
        for orders in per_sentence:
            for o in orders:
                ids, where = _assemble(story, o)
                seqs.append(ids)
                wheres.append(where)
        outs = encoder.encode_many(seqs)
        base = [_pool_positions(outs[0], _window_positions(base_where, m)) for m in members]
        scores, cursor = [], 1
        for i, orders in zip(natural, per_sentence):
            w = owner[i]
            sims = []
            for _ in orders:
                e = _pool_positions(outs[cursor], _window_positions(wheres[cursor], members[w]))
                sims.append(cosine_similarity(base[w], e))
                cursor += 1
            scores.append(1.0 - float(np.mean(sims)) if sims else 0.0)
        return scores

    # disruption: truncate the full story at token level, pool surviving window tokens
    seqs, positions = [], []
    for i in natural:
        j, k = story.spans[i]
        w_start = story.spans[members[owner[i]][0]][0]
        seqs.append(list(story.token_ids[: k + 1]))
        positions.append(list(range(w_start, k + 1)))
        seqs.append(list(story.token_ids[:j]))
        positions.append(list(range(w_start, j)))
    outs = encoder.encode_many(seqs)
    embs = [_pool_positions(h, p) for h, p in zip(outs, positions)]
    return [1.0 - cosine_similarity(embs[2 * i], embs[2 * i + 1]) for i in natural]


def _window_shift_orders(n: int, i: int, window: Sequence[int], include_end: bool) -> list[tuple[int, ...]]:
    """Shift targets restricted to the sentence's own window; the 'end'
    placement is right after the window's last sentence."""
    rest = [s for s in range(n) if s != i]
    original = tuple(range(n))
    targets: list[int | None] = [t for t in window if t != i]
    if include_end:
        targets.append(None)
    last = window[-1]
    seen, out = set(), []
    for t in targets:
        if t is None:
            if last == i:
                order = original
            else:
                pos = rest.index(last) + 1
                order = tuple(rest[:pos] + [i] + rest[pos:])
        else:
            pos = rest.index(t)
            order = tuple(rest[:pos] + [i] + rest[pos:])
        if order != original and order not in seen:
            seen.add(order)
            out.append(order)
    return out


# -- reports -----------------------------------------------------------------


def rank_descending(scores: Sequence[float]) -> list[float]:
    """1 = highest score; ties share the average rank."""
    return [float(r) for r in rankdata(-np.asarray(scores, dtype=np.float64), method="average")]


@dataclass
class SalienceReport:
    story_id: str
    scores: dict[str, list[float]]
    ranks: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.scores.values()}
        if len(lengths) > 1:
            raise ValueError(f"story {self.story_id!r}: score vectors differ in length")
        if not self.ranks:
            self.ranks = {op: rank_descending(v) for op, v in self.scores.items()}

    @property
    def n_sentences(self) -> int:
        return len(next(iter(self.scores.values())))

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.n_sentences):
            row = {"story_id": self.story_id, "sentence_idx": i + 1}
            for op in OPERATIONS:
                row[op] = self.scores[op][i] if op in self.scores else float("nan")
            out.append(row)
        return out


def score_story(story: Story, encoder, operations: Sequence[str] = OPERATIONS, partition=None,
                include_end: bool = True, contextual_summary: bool = False) -> SalienceReport:
    """Run the requested operations; with ``partition`` every operation runs per window."""
    scores = {}
    for op in operations:
        if partition is not None:
            scores[op] = score_windowed(story, partition, encoder, op, include_end)
        elif op == "deletion":
            scores[op] = score_deletion(story, encoder)
        elif op == "shifting":
            scores[op] = score_shifting(story, encoder, include_end)
        elif op == "disruption":
            scores[op] = score_disruption(story, encoder)
        elif op == "summarization":
            scores[op] = score_summarization(story, encoder, contextual_summary)
        else:
            raise ValueError(f"unknown operation {op!r}")
    return SalienceReport(story.id, scores)


class CountingEncoder:
    """Wraps an encoder and counts encoded sequences."""

    def __init__(self, inner):
        self.inner = inner
        self.cfg = inner.cfg
        self.calls = 0

    def encode_many(self, seqs):
        self.calls += len(seqs)
        return self.inner.encode_many(seqs)
