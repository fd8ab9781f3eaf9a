"""Sentence alignment between a story and its twin, and window partitions.

Sentence indices in paths and partitions are 1-based and inclusive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .text import BOS, Story, split_words

AlignmentPath = list[tuple[int, int]]
WindowPartition = tuple[tuple[int, int], ...]


def _standalone_sentence_vectors(story: Story, encoder) -> list[np.ndarray]:
    seqs = [(BOS,) + story.sentence_ids(i) for i in range(story.n_sentences)]
    return [h[1:].mean(axis=0) for h in encoder.encode_many(seqs)]


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity of a zero vector is undefined")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def sentence_similarities(anchor: Story, twin: Story, encoder) -> np.ndarray:
    """``s[i, j]`` = cosine of the standalone (eval-mode, mean-pooled) encodings
    of anchor sentence i+1 and twin sentence j+1."""
    if anchor.n_sentences == 0 or twin.n_sentences == 0:
        raise ValueError("both stories need at least one sentence")
    a = np.stack(_standalone_sentence_vectors(anchor, encoder))
    b = np.stack(_standalone_sentence_vectors(twin, encoder))
    return _cosine_matrix(a, b)


def lexical_similarities(anchor: Sequence[str], twin: Sequence[str]) -> np.ndarray:
    """Bag-of-words cosine between sentences; an encoder-free similarity source."""
    vocab: dict[str, int] = {}
    rows = []
    for sent in list(anchor) + list(twin):
        words = split_words(sent)
        for w in words:
            vocab.setdefault(w, len(vocab))
        rows.append(words)
    mat = np.zeros((len(rows), len(vocab)))
    for r, words in enumerate(rows):
        for w in words:
            mat[r, vocab[w]] += 1.0
    n = len(anchor)
    return _cosine_matrix(mat[:n], mat[n:])


def dtw_align(sim: np.ndarray) -> AlignmentPath:
    """Monotonic path from (1,1) to (n,m) with steps (1,0), (0,1), (1,1) that
    maximises the summed similarity; each visited cell counts once.

    Backtrace ties prefer the diagonal, then (i-1, j), then (i, j-1).
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] == 0 or sim.shape[1] == 0:
        raise ValueError(f"similarity matrix must be non-empty 2-D, got shape {sim.shape}")
    n, m = sim.shape
    acc = np.full((n, m), -np.inf)
    acc[0, 0] = sim[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + sim[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + sim[i, 0]
        row, prev = acc[i], acc[i - 1]
        s = sim[i]
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] > best:
                best = prev[j]
            if row[j - 1] > best:
                best = row[j - 1]
            row[j] = best + s[j]
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        options = []
        if i > 0 and j > 0:
            options.append((acc[i - 1, j - 1], i - 1, j - 1))
        if i > 0:
            options.append((acc[i - 1, j], i - 1, j))
        if j > 0:
            options.append((acc[i, j - 1], i, j - 1))
        best = max(o[0] for o in options)
        _, i, j = next(o for o in options if o[0] == best)
        path.append((i, j))
    return [(i + 1, j + 1) for i, j in reversed(path)]


def path_score(sim: np.ndarray, path: AlignmentPath) -> float:
    return float(sum(sim[i - 1, j - 1] for i, j in path))


def check_path(path: AlignmentPath, n: int, m: int) -> None:
    if not path or path[0] != (1, 1) or path[-1] != (n, m):
        raise ValueError(f"path must run from (1, 1) to ({n}, {m})")
    for (a, b), (c, d) in zip(path, path[1:]):
        if (c - a, d - b) not in ((1, 0), (0, 1), (1, 1)):
            raise ValueError(f"invalid step ({a},{b}) -> ({c},{d})")


def make_windows(n: int, windows: int) -> WindowPartition:
    """Split ``n`` sentences into ``windows`` contiguous blocks; the first
    ``n % windows`` blocks get one extra sentence."""
    if windows < 1:
        raise ValueError("need at least one window")
    if n < windows:
        raise ValueError(f"cannot split {n} sentences into {windows} windows")
    base, extra = divmod(n, windows)
    out, start = [], 1
    for w in range(windows):
        size = base + (1 if w < extra else 0)
        out.append((start, start + size - 1))
        start += size
    return tuple(out)


def window_sizes(partition: WindowPartition) -> list[int]:
    return [e - s + 1 for s, e in partition]


def project_windows(path: AlignmentPath, partition: WindowPartition) -> WindowPartition:
    """Carry anchor windows onto the twin through the alignment.

    Twin window w spans the min..max twin index aligned to any anchor sentence
    in window w. A twin sentence claimed by two windows stays with the earlier
    one; a window left with nothing is returned as ``(s, s - 1)``.
    """
    out = []
    prev_end = 0
    for s, e in partition:
        js = [j for i, j in path if s <= i <= e]
        if not js:
            raise ValueError(f"path does not cover anchor window ({s}, {e})")
        start = max(min(js), prev_end + 1)
        end = max(max(js), start - 1)
        out.append((start, end))
        prev_end = end
    return tuple(out)


@dataclass(frozen=True)
class Alignment:
    id: str
    path: tuple[tuple[int, int], ...]
    anchor_windows: WindowPartition
    twin_windows: WindowPartition
    kept: bool

    @property
    def anchor_length(self) -> int:
        return self.path[-1][0]

    @property
    def twin_length(self) -> int:
        return self.path[-1][1]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "path": [list(p) for p in self.path],
            "anchor_windows": [list(w) for w in self.anchor_windows],
            "twin_windows": [list(w) for w in self.twin_windows],
            "kept": self.kept,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Alignment":
        return cls(
            id=rec["id"],
            path=tuple(tuple(p) for p in rec["path"]),
            anchor_windows=tuple(tuple(w) for w in rec["anchor_windows"]),
            twin_windows=tuple(tuple(w) for w in rec["twin_windows"]),
            kept=bool(rec["kept"]),
        )


def passes_filter(al: Alignment, min_twin_window: int = 3, min_anchor_sentences: int = 20,
                  twin_length_band: int | None = 14) -> bool:
    if al.anchor_length < min_anchor_sentences:
        return False
    if twin_length_band is not None and abs(al.twin_length - al.anchor_length) > twin_length_band:
        return False
    return all(size >= min_twin_window for size in window_sizes(al.twin_windows))


def filter_twins(alignments: Sequence[Alignment], min_twin_window: int = 3, min_anchor_sentences: int = 20,
                 twin_length_band: int | None = 14) -> list[Alignment]:
    """Keep alignments whose anchor is long enough, whose twin length is within
    the band, and whose every twin window has ``min_twin_window`` sentences."""
    return [a for a in alignments if passes_filter(a, min_twin_window, min_anchor_sentences, twin_length_band)]


def align_example(anchor: Story, twin: Story, windows: int = 5, *, encoder=None,
                  similarity: Callable[[Story, Story], np.ndarray] | None = None,
                  min_twin_window: int = 3, min_anchor_sentences: int = 20,
                  twin_length_band: int | None = 14, example_id: str | None = None) -> Alignment:
    """DTW-align ``twin`` to ``anchor`` and project an even anchor partition onto it.

    ``similarity`` overrides the encoder-based sentence similarity.
    """
    if similarity is not None:
        sim = similarity(anchor, twin)
    elif encoder is not None:
        sim = sentence_similarities(anchor, twin, encoder)
    else:
        sim = lexical_similarities(anchor.sentences, twin.sentences)
    path = dtw_align(sim)
    sid = example_id if example_id is not None else anchor.id
    if anchor.n_sentences < windows:
        return Alignment(sid, tuple(path), (), (), False)
    aw = make_windows(anchor.n_sentences, windows)
    tw = project_windows(path, aw)
    al = Alignment(sid, tuple(path), aw, tw, True)
    kept = passes_filter(al, min_twin_window, min_anchor_sentences, twin_length_band)
    return Alignment(sid, tuple(path), aw, tw, kept)
