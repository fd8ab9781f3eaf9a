"""Bidirectional transformer encoder with span/window pooling.

Post-LN blocks in the BERT arrangement: embeddings -> LN -> dropout, then per
layer ``LN(x + drop(attn(x)))`` and ``LN(x + drop(ffn(x)))``. No causal mask.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamWState
from .rng import RngState
from .text import PAD

_NEG = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 128
    max_len: int = 512
    dropout: float = 0.1
    pooling: str = "mean"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} is not divisible by {self.heads} heads")
        if self.pooling not in ("mean", "cls"):
            raise ValueError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 5:
            raise ValueError("vocabulary too small")


def _glorot(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class Encoder:
    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: EncoderConfig, seed: int = 0) -> "Encoder":
        rng = RngState(seed, "encoder-init")
        d, ff = cfg.dim, cfg.ff_dim
        raw: dict[str, np.ndarray] = {
            "tok_emb": _glorot(rng, cfg.vocab_size, d),
            "pos_emb": _glorot(rng, cfg.max_len, d),
            "emb_ln.g": np.ones(d),
            "emb_ln.b": np.zeros(d),
            "mlm.b": np.zeros(cfg.vocab_size),
        }
        for layer in range(cfg.layers):
            p = f"l{layer}."
            for name in ("wq", "wk", "wv", "wo"):
                raw[p + name] = _glorot(rng, d, d)
                raw[p + "b" + name[1]] = np.zeros(d)
            raw[p + "w1"] = _glorot(rng, d, ff)
            raw[p + "b1"] = np.zeros(ff)
            raw[p + "w2"] = _glorot(rng, ff, d)
            raw[p + "b2"] = np.zeros(d)
            for ln in ("ln1", "ln2"):
                raw[p + ln + ".g"] = np.ones(d)
                raw[p + ln + ".b"] = np.zeros(d)
        return cls(cfg, {k: Tensor(v, requires_grad=True) for k, v in raw.items()})

    # -- persistence -------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def save(self, path, *, seed: int, optimizer: AdamWState | None = None, extra: dict | None = None) -> None:
        header = {"encoder_config": asdict(self.cfg)}
        header.update(extra or {})
        save_checkpoint(path, self.state_dict(), seed=seed, header=header, optimizer=optimizer)

    @classmethod
    def load(cls, path) -> "Encoder":
        meta, tensors, _ = load_checkpoint(path)
        cfg = EncoderConfig(**meta["encoder_config"])
        return cls(cfg, {k: Tensor(v, requires_grad=True) for k, v in tensors.items()})

    def copy(self) -> "Encoder":
        return Encoder(self.cfg, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()})

    # -- forward -----------------------------------------------------------

    def forward(self, ids: np.ndarray, lengths: np.ndarray, train: bool = False,
                rng: RngState | None = None) -> Tensor:
        """Contextual token vectors for a padded ``(B, T)`` id batch -> ``(B, T, d)``."""
        cfg, P = self.cfg, self.params
        ids = np.asarray(ids, dtype=np.int64)
        B, T = ids.shape
        if T > cfg.max_len:
            raise ValueError(f"input of {T} tokens exceeds max length {cfg.max_len}")
        p = cfg.dropout if train else 0.0
        d, H = cfg.dim, cfg.heads
        dh = d // H
        valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
        attn_bias = Tensor(np.where(valid, 0.0, _NEG)[:, None, None, :])

        x = ag.take_rows(P["tok_emb"], ids) + ag.take_rows(P["pos_emb"], np.arange(T))
        x = ag.layer_norm(x, P["emb_ln.g"], P["emb_ln.b"])
        x = ag.dropout(x, p, rng, train)
        for layer in range(cfg.layers):
            pre = f"l{layer}."

            def heads(t):
                return ag.transpose(ag.reshape(t, (B, T, H, dh)), (0, 2, 1, 3))

            q = heads(x @ P[pre + "wq"] + P[pre + "bq"])
            k = heads(x @ P[pre + "wk"] + P[pre + "bk"])
            v = heads(x @ P[pre + "wv"] + P[pre + "bv"])
            scores = ag.scale(q @ ag.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh)) + attn_bias
            probs = ag.dropout(ag.softmax(scores, axis=-1), p, rng, train)
            ctx = ag.reshape(ag.transpose(probs @ v, (0, 2, 1, 3)), (B, T, d))
            attn = ag.dropout(ctx @ P[pre + "wo"] + P[pre + "bo"], p, rng, train)
            x = ag.layer_norm(x + attn, P[pre + "ln1.g"], P[pre + "ln1.b"])
            hidden = ag.gelu(x @ P[pre + "w1"] + P[pre + "b1"])
            ffn = ag.dropout(hidden @ P[pre + "w2"] + P[pre + "b2"], p, rng, train)
            x = ag.layer_norm(x + ffn, P[pre + "ln2.g"], P[pre + "ln2.b"])
        return x

    def mlm_logits(self, hidden: Tensor) -> Tensor:
        """Tied output projection: ``hidden @ tok_emb.T + b``."""
        return hidden @ ag.transpose(self.params["tok_emb"], (1, 0)) + self.params["mlm.b"]

    def forward_sequences(self, seqs: Sequence[Sequence[int]], train: bool = False,
                          rng: RngState | None = None) -> tuple[Tensor, np.ndarray]:
        ids, lengths = pad_batch(seqs)
        return self.forward(ids, lengths, train, rng), lengths

    def encode_tokens(self, token_ids: Sequence[int], train_mode: bool = False,
                      dropout_stream: RngState | None = None) -> np.ndarray:
        """Contextual vectors ``(len(token_ids), d)`` for one sequence."""
        h, _ = self.forward_sequences([token_ids], train_mode, dropout_stream)
        return h.data[0]

    def encode_many(self, seqs: Sequence[Sequence[int]], chunk: int = 64) -> list[np.ndarray]:
        """Eval-mode encoding of many sequences; returns one ``(len, d)`` array each."""
        out: list[np.ndarray] = []
        for start in range(0, len(seqs), chunk):
            part = seqs[start : start + chunk]
            h, lengths = self.forward_sequences(part)
            out.extend(h.data[b, : lengths[b]] for b in range(len(part)))
        return out


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    if not seqs:
        raise ValueError("empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("cannot encode an empty sequence")
    ids = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
    return ids, lengths


# -- pooling -----------------------------------------------------------------


def pool_span(tokens: np.ndarray, span: tuple[int, int], mode: str = "mean") -> np.ndarray:
    """Mean of rows ``j..k`` (inclusive), or row 0 in ``cls`` mode."""
    j, k = span
    if k < j:
        raise ValueError(f"empty span {span}")
    if mode == "cls":
        return tokens[0].copy()
    if j < 0 or k >= len(tokens):
        raise IndexError(f"span {span} outside a {len(tokens)}-token sequence")
    return tokens[j : k + 1].mean(axis=0)


def pool_sequence(tokens: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Whole-sequence embedding: mean over content tokens (BOS excluded), CLS row
    in ``cls`` mode, and the BOS row for a BOS-only sequence."""
    if mode == "cls" or len(tokens) == 1:
        return tokens[0].copy()
    return tokens[1:].mean(axis=0)


def window_token_ranges(spans: Sequence[tuple[int, int]], partition: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Token ranges of each window; ``partition`` holds 1-based inclusive sentence ranges."""
    check_partition(partition, len(spans))
    return [(spans[s - 1][0], spans[e - 1][1]) for s, e in partition]


def check_partition(partition: Sequence[tuple[int, int]], n_sentences: int) -> None:
    expect = 1
    for s, e in partition:
        if s != expect:
            kind = "gap" if s > expect else "overlap"
            raise ValueError(f"window partition has a {kind} at sentence {min(s, expect)}")
        if e < s:
            raise ValueError(f"empty window ({s}, {e})")
        expect = e + 1
    if expect != n_sentences + 1:
        raise ValueError(f"window partition covers 1..{expect - 1}, story has {n_sentences} sentences")


def pool_windows(tokens: np.ndarray, spans: Sequence[tuple[int, int]],
                 partition: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """One mean-pooled vector per window of sentences."""
    return [tokens[j : k + 1].mean(axis=0) for j, k in window_token_ranges(spans, partition)]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    c = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def pooling_matrix(rows: Sequence[tuple[int, np.ndarray]], batch: int, length: int) -> np.ndarray:
    """Dense ``(len(rows), batch*length)`` averaging matrix; each row is
    ``(sequence index, token positions)``."""
    W = np.zeros((len(rows), batch * length))
    for r, (b, positions) in enumerate(rows):
        positions = np.asarray(positions)
        if positions.size == 0:
            raise ValueError("cannot pool an empty token set")
        W[r, b * length + positions] = 1.0 / positions.size
    return W


def pool_tensor(hidden: Tensor, rows: Sequence[tuple[int, np.ndarray]]) -> Tensor:
    """Differentiable pooling of a ``(B, T, d)`` tensor into ``(len(rows), d)``."""
    B, T, d = hidden.shape
    W = Tensor(pooling_matrix(rows, B, T))
    return W @ ag.reshape(hidden, (B * T, d))


def sequence_positions(length: int, mode: str = "mean") -> np.ndarray:
    """Token positions pooled for a whole-sequence embedding of ``length`` tokens."""
    if mode == "cls" or length == 1:
        return np.array([0])
    return np.arange(1, length)
