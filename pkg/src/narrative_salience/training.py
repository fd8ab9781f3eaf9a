"""Contrastive (InfoNCE) and masked-LM training of the encoder."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .alignment import Alignment, WindowPartition, align_example, lexical_similarities, make_windows
from .autograd import Tensor
from .encoder import Encoder, EncoderConfig, pool_tensor, sequence_positions, window_token_ranges
from .optim import AdamW
from .rng import RngState
from .text import MASK, SPECIAL_TOKENS, Story, TrainingExample, Vocabulary, build_vocab, tokenize_story

log = logging.getLogger(__name__)

MODES = ("narrative-twins", "dropout-twins", "masked-lm")


@dataclass
class TrainConfig:
    mode: str = "narrative-twins"
    temperature: float = 0.05
    batch_size: int = 32
    epochs: int = 5
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    use_distractors: bool = True
    use_in_story_negatives: bool = True
    include_anchor_negatives: bool = False
    share_distractors: bool = False
    window_level: bool = False
    windows: int = 5
    alignment_similarity: str = "encoder"
    min_twin_window: int = 3
    min_anchor_sentences: int = 20
    twin_length_band: int = 14
    mask_rate: float = 0.15
    seed: int = 0
    min_count: int = 1
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 128
    max_len: int = 512
    dropout: float = 0.1
    pooling: str = "mean"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be ≥1 and epochs ≥0")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must be in (0, 1)")
        in_story_only = self.window_level and self.use_in_story_negatives
        if self.mode != "masked-lm" and self.batch_size < 2 and not in_story_only:
            raise ValueError("contrastive training needs batch_size ≥ 2 for in-batch negatives")
        if self.alignment_similarity not in ("encoder", "lexical"):
            raise ValueError("alignment_similarity must be 'encoder' or 'lexical'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, dim=self.dim, layers=self.layers, heads=self.heads,
                             ff_dim=self.ff_dim, max_len=self.max_len, dropout=self.dropout,
                             pooling=self.pooling)


@dataclass(frozen=True)
class TokenizedExample:
    id: str
    anchor: Story
    twin: Story | None = None
    distractor: Story | None = None
    anchor_windows: WindowPartition | None = None
    twin_windows: WindowPartition | None = None
    distractor_windows: WindowPartition | None = None


def tokenize_example(ex: TrainingExample, vocab: Vocabulary) -> TokenizedExample:
    return TokenizedExample(
        id=ex.id,
        anchor=tokenize_story(ex.anchor, vocab, ex.id),
        twin=None if ex.twin is None else tokenize_story(ex.twin, vocab, ex.id + "#twin"),
        distractor=None if ex.distractor is None else tokenize_story(ex.distractor, vocab, ex.id + "#distractor"),
    )


def corpus_texts(examples: Sequence[TrainingExample]):
    for ex in examples:
        for story in (ex.anchor, ex.twin, ex.distractor):
            if story is not None:
                yield from story


# -- batches and loss --------------------------------------------------------


@dataclass
class ContrastiveBatch:
    """Rows of anchors scored against a shared candidate pool.

    The pool is ``positives`` (one per row, row r's positive is pool index r),
    then ``distractors`` if any, then ``anchors`` if anchor negatives are used.
    ``negatives[r]`` indexes the pool and never contains r.
    """

    anchors: Tensor
    positives: Tensor
    distractors: Tensor | None
    negatives: list[np.ndarray]
    anchor_pool: bool = False
    row_ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.anchors.shape != self.positives.shape:
            raise ValueError(f"anchors {self.anchors.shape} and positives {self.positives.shape} differ")
        if len(self.negatives) != self.anchors.shape[0]:
            raise ValueError("one negative set per anchor row is required")
        for r, neg in enumerate(self.negatives):
            if r in set(neg.tolist()):
                raise ValueError(f"row {r}: own positive listed as a negative")

    @property
    def rows(self) -> int:
        return self.anchors.shape[0]

    def pool(self) -> Tensor:
        parts = [self.positives]
        if self.distractors is not None:
            parts.append(self.distractors)
        if self.anchor_pool:
            parts.append(self.anchors)
        return parts[0] if len(parts) == 1 else ag.concat(parts, axis=0)

    def candidate_mask(self) -> np.ndarray:
        size = self.pool().shape[0]
        mask = np.zeros((self.rows, size), dtype=bool)
        for r, neg in enumerate(self.negatives):
            mask[r, r] = True
            mask[r, neg] = True
        return mask

    def candidate_counts(self) -> list[int]:
        return [1 + len(n) for n in self.negatives]


def info_nce_loss(batch: ContrastiveBatch, temperature: float) -> Tensor:
    """Mean over rows of ``-log softmax(cos(y, c)/tau)[positive]`` over each row's candidates."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if batch.rows == 0:
        raise ValueError("empty candidate set")
    y = ag.l2_normalize(batch.anchors)
    c = ag.l2_normalize(batch.pool())
    logits = ag.scale(y @ ag.transpose(c, (1, 0)), 1.0 / temperature)
    return ag.cross_entropy(logits, np.arange(batch.rows), batch.candidate_mask())


def _story_negatives(B: int, has_distractor: Sequence[bool], cfg: TrainConfig) -> list[np.ndarray]:
    dist_index = {}
    if cfg.use_distractors:
        for b in range(B):
            if has_distractor[b]:
                dist_index[b] = B + len(dist_index)
    anchor_base = B + len(dist_index)
    out = []
    for a in range(B):
        neg = [b for b in range(B) if b != a]
        if a in dist_index:
            neg.append(dist_index[a])
        if cfg.share_distractors:
            neg.extend(i for b, i in dist_index.items() if b != a)
        if cfg.include_anchor_negatives:
            neg.extend(anchor_base + b for b in range(B) if b != a)
        out.append(np.array(sorted(neg), dtype=np.int64))
    return out


def build_story_batch(encoder: Encoder, examples: Sequence[TokenizedExample], cfg: TrainConfig,
                      rng: RngState | None = None, train: bool = True) -> ContrastiveBatch:
    """Encode anchors, positives and distractors and lay out candidate sets.

    Positives are the twins (``narrative-twins``) or a second train-mode pass
    over the anchors on an independent dropout stream (``dropout-twins``).
    """
    if cfg.mode == "narrative-twins":
        missing = [ex.id for ex in examples if ex.twin is None]
        if missing:
            raise ValueError(f"narrative-twins mode needs a twin for every example; missing: {missing[:5]}")
    elif cfg.mode != "dropout-twins":
        raise ValueError(f"build_story_batch does not handle mode {cfg.mode!r}")
    rng = rng or RngState(cfg.seed, "batch")
    mode = encoder.cfg.pooling
    B = len(examples)
    with_dist = [cfg.use_distractors and ex.distractor is not None for ex in examples]

    first = [ex.anchor.token_ids for ex in examples]
    first += [ex.distractor.token_ids for ex, d in zip(examples, with_dist) if d]
    h, lengths = encoder.forward_sequences(first, train, rng.child("anchor"))
    pooled = pool_tensor(h, [(b, sequence_positions(int(n), mode)) for b, n in enumerate(lengths)])
    anchors = ag.select(pooled, slice(0, B)) if len(first) > B else pooled
    distractors = ag.select(pooled, slice(B, len(first))) if len(first) > B else None

    if cfg.mode == "narrative-twins":
        second = [ex.twin.token_ids for ex in examples]
    else:
        second = [ex.anchor.token_ids for ex in examples]
    h2, lengths2 = encoder.forward_sequences(second, train, rng.child("positive"))
    positives = pool_tensor(h2, [(b, sequence_positions(int(n), mode)) for b, n in enumerate(lengths2)])
    return ContrastiveBatch(anchors, positives, distractors, _story_negatives(B, with_dist, cfg),
                            anchor_pool=cfg.include_anchor_negatives, row_ids=[ex.id for ex in examples])


def build_window_batch(encoder: Encoder, examples: Sequence[TokenizedExample], cfg: TrainConfig,
                       rng: RngState | None = None, train: bool = True) -> ContrastiveBatch:
    """One row per (example, window). Windows are always mean-pooled."""
    rng = rng or RngState(cfg.seed, "batch")
    W = None
    for ex in examples:
        if ex.anchor_windows is None:
            raise ValueError(f"example {ex.id!r} has no window partition")
        if W is None:
            W = len(ex.anchor_windows)
        if len(ex.anchor_windows) != W:
            raise ValueError(f"example {ex.id!r}: {len(ex.anchor_windows)} windows, batch uses {W}")
        if cfg.mode == "narrative-twins":
            if ex.twin is None or ex.twin_windows is None:
                raise ValueError(f"example {ex.id!r}: narrative-twins window mode needs aligned twin windows")
            if len(ex.twin_windows) != W:
                raise ValueError(f"example {ex.id!r}: anchor has {W} windows, twin has {len(ex.twin_windows)}")
        if cfg.use_distractors and ex.distractor is not None and ex.distractor_windows is not None:
            if len(ex.distractor_windows) != W:
                raise ValueError(f"example {ex.id!r}: distractor has {len(ex.distractor_windows)} windows, expected {W}")
    B = len(examples)

    def window_rows(stories, partitions):
        rows = []
        for b, (story, part) in enumerate(zip(stories, partitions)):
            for j, k in window_token_ranges(story.spans, part):
                rows.append((b, np.arange(j, k + 1)))
        return rows

    with_dist = [cfg.use_distractors and ex.distractor is not None and ex.distractor_windows is not None
                 for ex in examples]
    first_stories = [ex.anchor for ex in examples] + [ex.distractor for ex, d in zip(examples, with_dist) if d]
    first_parts = [ex.anchor_windows for ex in examples] + [ex.distractor_windows for ex, d in zip(examples, with_dist) if d]
    h, _ = encoder.forward_sequences([s.token_ids for s in first_stories], train, rng.child("anchor"))
    pooled = pool_tensor(h, window_rows(first_stories, first_parts))
    R = B * W
    anchors = ag.select(pooled, slice(0, R)) if len(first_stories) > B else pooled
    distractors = ag.select(pooled, slice(R, pooled.shape[0])) if len(first_stories) > B else None

    if cfg.mode == "narrative-twins":
        second, parts2 = [ex.twin for ex in examples], [ex.twin_windows for ex in examples]
    else:
        second, parts2 = [ex.anchor for ex in examples], [ex.anchor_windows for ex in examples]
    h2, _ = encoder.forward_sequences([s.token_ids for s in second], train, rng.child("positive"))
    positives = pool_tensor(h2, window_rows(second, parts2))

    dist_base: dict[int, int] = {}
    for b in range(B):
        if with_dist[b]:
            dist_base[b] = R + len(dist_base) * W
    anchor_base = R + len(dist_base) * W
    negatives = []
    for b in range(B):
        for w in range(W):
            neg = []
            if cfg.use_in_story_negatives:
                neg.extend(b * W + v for v in range(W) if v != w)
            if b in dist_base:
                neg.append(dist_base[b] + w)
            neg.extend(c * W + v for c in range(B) if c != b for v in range(W))
            if cfg.include_anchor_negatives:
                neg.extend(anchor_base + c * W + v for c in range(B) if c != b for v in range(W))
            negatives.append(np.array(sorted(neg), dtype=np.int64))
    return ContrastiveBatch(anchors, positives, distractors, negatives, anchor_pool=cfg.include_anchor_negatives,
                            row_ids=[(ex.id, w) for ex in examples for w in range(W)])


def masked_lm_step(encoder: Encoder, stories: Sequence[Sequence[int]], mask_rate: float, rng: RngState,
                   train: bool = True) -> Tensor | None:
    """BERT-style masked-LM loss. Returns ``None`` if nothing in the batch is maskable."""
    if not 0.0 < mask_rate < 1.0:
        raise ValueError("mask_rate must be in (0, 1)")
    V = encoder.cfg.vocab_size
    first_regular = len(SPECIAL_TOKENS)
    sel_rng = rng.child("mask")
    inputs, targets, where = [], [], []
    kept = 0
    for seq in stories:
        seq = np.asarray(seq, dtype=np.int64)
        maskable = np.flatnonzero(seq >= first_regular)
        if maskable.size == 0:
            continue
        n_sel = max(1, int(round(mask_rate * maskable.size)))
        chosen = np.sort(maskable[sel_rng.permutation(maskable.size)[:n_sel]])
        corrupted = seq.copy()
        roll = sel_rng.random(n_sel)
        rand_ids = sel_rng.integers(first_regular, V, n_sel)
        for pos, u, rid in zip(chosen, roll, rand_ids):
            if u < 0.8:
                corrupted[pos] = MASK
            elif u < 0.9:
                corrupted[pos] = rid
        inputs.append(corrupted)
        targets.extend(seq[chosen].tolist())
        where.append((kept, chosen))
        kept += 1
    if not inputs:
        return None
    h, _ = encoder.forward_sequences(inputs, train, rng.child("dropout"))
    B, T, d = h.shape
    flat = ag.reshape(h, (B * T, d))
    rows = np.concatenate([b * T + pos for b, pos in where])
    logits = encoder.mlm_logits(ag.select(flat, rows))
    return ag.cross_entropy(logits, np.array(targets))


# -- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    encoder: Encoder
    vocab: Vocabulary
    losses: list[tuple[int, float]]
    checkpoints: list[Path]
    dropped: list[str] = field(default_factory=list)


def prepare_windows(encoder: Encoder, examples: Sequence[TokenizedExample], cfg: TrainConfig,
                    similarity: Callable | None = None) -> tuple[list[TokenizedExample], list[str]]:
    """Attach anchor/twin/distractor window partitions, dropping twins that fail the filters."""
    if similarity is None and cfg.alignment_similarity == "lexical":
        similarity = _lexical
    kept, dropped = [], []
    for ex in examples:
        if ex.anchor.n_sentences < max(cfg.windows, 1):
            dropped.append(ex.id)
            continue
        aw = make_windows(ex.anchor.n_sentences, cfg.windows)
        dw = None
        if ex.distractor is not None and ex.distractor.n_sentences >= cfg.windows:
            dw = make_windows(ex.distractor.n_sentences, cfg.windows)
        tw = None
        if cfg.mode == "narrative-twins":
            if ex.twin is None:
                dropped.append(ex.id)
                continue
            al = align_example(ex.anchor, ex.twin, cfg.windows, encoder=encoder, similarity=similarity,
                               min_twin_window=cfg.min_twin_window, min_anchor_sentences=cfg.min_anchor_sentences,
                               twin_length_band=cfg.twin_length_band)
            if not al.kept:
                dropped.append(ex.id)
                continue
            tw = al.twin_windows
        kept.append(TokenizedExample(ex.id, ex.anchor, ex.twin, ex.distractor, aw, tw, dw))
    return kept, dropped


def _lexical(anchor: Story, twin: Story) -> np.ndarray:
    return lexical_similarities(anchor.sentences, twin.sentences)


def attach_alignments(examples: Sequence[TokenizedExample], alignments: Sequence[Alignment],
                      cfg: TrainConfig) -> tuple[list[TokenizedExample], list[str]]:
    """Use pre-computed alignments (e.g. from ``align``) instead of aligning here.

    Examples without a kept alignment are dropped.
    """
    by_id = {a.id: a for a in alignments}
    kept, dropped = [], []
    for ex in examples:
        al = by_id.get(ex.id)
        if al is None or not al.kept or len(al.anchor_windows) != cfg.windows:
            dropped.append(ex.id)
            continue
        if al.anchor_length != ex.anchor.n_sentences or (ex.twin is not None and al.twin_length != ex.twin.n_sentences):
            raise ValueError(f"alignment for {ex.id!r} does not match the story lengths")
        dw = None
        if ex.distractor is not None and ex.distractor.n_sentences >= cfg.windows:
            dw = make_windows(ex.distractor.n_sentences, cfg.windows)
        kept.append(TokenizedExample(ex.id, ex.anchor, ex.twin, ex.distractor, al.anchor_windows,
                                     al.twin_windows, dw))
    return kept, dropped


def contrastive_loss(encoder: Encoder, batch: Sequence[TokenizedExample], cfg: TrainConfig,
                     rng: RngState, train: bool = True) -> Tensor:
    builder = build_window_batch if cfg.window_level else build_story_batch
    return info_nce_loss(builder(encoder, batch, cfg, rng, train), cfg.temperature)


def train(corpus: Sequence[TrainingExample], cfg: TrainConfig, out_dir=None, *, vocab: Vocabulary | None = None,
          encoder: Encoder | None = None, windows: Sequence[TokenizedExample] | None = None,
          similarity: Callable | None = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs; the last batch of an epoch may be short.

    When ``out_dir`` is given, writes ``epoch0.npz`` (initial weights),
    ``epoch{e}.npz`` after each epoch, and ``metrics.csv`` with ``step,loss``.
    ``windows`` may carry pre-computed partitions for window-level training.
    """
    if not corpus and windows is None:
        raise ValueError("empty training corpus")
    vocab = vocab or build_vocab(corpus_texts(corpus), cfg.min_count)
    encoder = encoder or Encoder.init(cfg.encoder_config(len(vocab)), seed=cfg.seed)
    if encoder.cfg.vocab_size != len(vocab):
        raise ValueError(f"encoder vocabulary size {encoder.cfg.vocab_size} != vocabulary size {len(vocab)}")
    if windows is not None:
        examples = list(windows)
        dropped: list[str] = []
    else:
        examples = [tokenize_example(ex, vocab) for ex in corpus]
        dropped = []
        if cfg.window_level and cfg.mode != "masked-lm":
            examples, dropped = prepare_windows(encoder, examples, cfg, similarity)
            if dropped:
                log.info("window filtering dropped %d of %d examples", len(dropped), len(corpus))
    if not examples:
        raise ValueError("no training examples left after filtering")
    if cfg.mode == "narrative-twins":
        missing = [ex.id for ex in examples if ex.twin is None]
        if missing:
            raise ValueError(f"narrative-twins mode needs a twin for every example; missing: {missing[:5]}")

    opt = AdamW(encoder.params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = RngState(cfg.seed, "train")
    losses: list[tuple[int, float]] = []
    ckpts: list[Path] = []
    out = Path(out_dir) if out_dir is not None else None
    extra = {"vocab": vocab.itos, "train_config": asdict(cfg)}

    def checkpoint(epoch: int):
        if out is not None:
            path = out / f"epoch{epoch}.npz"
            encoder.save(path, seed=cfg.seed, optimizer=opt.state, extra={**extra, "epoch": epoch})
            ckpts.append(path)

    checkpoint(0)
    step = 0
    n = len(examples)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.child(f"shuffle/{epoch}").permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            step_rng = rng.child(f"step/{step}")
            if cfg.mode == "masked-lm":
                seqs = [s.token_ids for ex in batch for s in (ex.anchor, ex.twin, ex.distractor) if s is not None]
                loss = masked_lm_step(encoder, seqs, cfg.mask_rate, step_rng)
                if loss is None:
                    continue
            else:
                loss = contrastive_loss(encoder, batch, cfg, step_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            losses.append((step, loss.item()))
        log.info("epoch %d done, last loss %.4f", epoch, losses[-1][1] if losses else float("nan"))
        checkpoint(epoch)
    if out is not None:
        write_metrics(out / "metrics.csv", losses)
    return TrainResult(encoder, vocab, losses, ckpts, dropped)


def write_metrics(path, losses: Sequence[tuple[int, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for s, l in losses:
            w.writerow([s, repr(l)])


def read_metrics(path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]


def load_trained(path) -> tuple[Encoder, Vocabulary]:
    """Load an encoder checkpoint written by :func:`train` together with its vocabulary."""
    from .checkpoint import load_checkpoint

    meta, _, _ = load_checkpoint(path)
    if "vocab" not in meta:
        raise ValueError(f"{path}: checkpoint carries no vocabulary")
    return Encoder.load(path), Vocabulary(meta["vocab"])

