"""Ranking metrics, the paired permutation test, label statistics and naive baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .alignment import make_windows
from .rng import RngState
from .salience import OPERATIONS
from .text import SalienceLabels

BASELINES = ("random", "increasing", "decreasing")


class MetricUndefined(ValueError):
    """The metric has no value for this input; the message says why."""


def spearman_rho(pred: Sequence[float], human: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    pred = np.asarray(pred, dtype=np.float64)
    human = np.asarray(human, dtype=np.float64)
    if pred.shape != human.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {human.size} labels")
    if pred.size < 2:
        raise MetricUndefined("fewer than two sentences")
    if np.all(pred == pred[0]):
        raise MetricUndefined("constant predictions")
    if np.all(human == human[0]):
        raise MetricUndefined("constant human labels")
    rp = rankdata(pred) - (pred.size + 1) / 2.0
    rh = rankdata(human) - (pred.size + 1) / 2.0
    rho = float(rp @ rh / math.sqrt((rp @ rp) * (rh @ rh)))
    return min(1.0, max(-1.0, rho))


def auc(pred: Sequence[float], relevant: Sequence[bool]) -> float:
    """Share of (relevant, irrelevant) pairs ranked correctly; ties count half."""
    pred = np.asarray(pred, dtype=np.float64)
    rel = np.asarray(relevant, dtype=bool)
    if pred.shape != rel.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {rel.size} labels")
    pos, neg = pred[rel], pred[~rel]
    if pos.size == 0:
        raise MetricUndefined("no relevant sentence")
    if neg.size == 0:
        raise MetricUndefined("no irrelevant sentence")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass
class WindowAUC:
    """Per-window values for one story; ``None`` marks a skipped window."""

    values: list[float | None]
    tp_types: list[tuple[int, ...]]

    @property
    def kept(self) -> list[float]:
        return [v for v in self.values if v is not None]

    @property
    def skipped(self) -> int:
        return sum(v is None for v in self.values)


def window_auc(pred: Sequence[float], labels: SalienceLabels, partition) -> WindowAUC:
    """For each window holding a turning point: the fraction of the window's
    sentences scored strictly below the labelled sentence. Windows without a
    label are skipped; several labels in one window are averaged."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size != len(labels.counts):
        raise ValueError(f"story {labels.id!r}: {pred.size} scores vs {len(labels.counts)} sentences")
    tps = labels.turning_points or ()
    values, types = [], []
    for s, e in partition:
        inside = [t for t in tps if s <= t.sentence <= e]
        if not inside:
            values.append(None)
            types.append(())
            continue
        window = pred[s - 1 : e]
        vals = [float((window < pred[t.sentence - 1]).sum()) / window.size for t in inside]
        values.append(float(np.mean(vals)))
        types.append(tuple(t.tp for t in inside))
    return WindowAUC(values, types)


def paired_permutation_test(metric_a: Sequence[float], metric_b: Sequence[float], n_perm: int = 10_000,
                            seed: int = 0) -> float:
    """Two-sided sign-flip test on paired differences with the +1 correction:
    ``p = (1 + #{|mean flipped diff| >= |mean observed diff|}) / (n_perm + 1)``."""
    a = np.asarray(metric_a, dtype=np.float64)
    b = np.asarray(metric_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError("need two equal-length, non-empty vectors")
    if n_perm < 1:
        raise ValueError("n_perm must be positive")
    d = a - b
    n = d.size
    observed = abs(float(np.ones(n) @ d)) / n
    tol = 1e-12 * max(1.0, observed)
    rng = RngState(seed, "permutation-test")
    hits = 0
    chunk = 4096
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        signs = np.where(rng.random((m, n)) < 0.5, -1.0, 1.0)
        stats = np.abs(signs @ d) / n
        hits += int((stats >= observed - tol).sum())
        done += m
    return (1 + hits) / (n_perm + 1)


@dataclass
class LabelStats:
    mean_entropy: float
    mean_perplexity: float
    perplexity_of_mean_entropy: float
    stories: int
    skipped: int


def label_entropy(counts: Sequence[int]) -> float:
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise MetricUndefined("no annotations")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def label_stats(labels: Sequence[SalienceLabels]) -> LabelStats:
    """Base-2 entropy of each story's normalised counts, and perplexity ``2**H``."""
    ents = []
    skipped = 0
    for lab in labels:
        try:
            ents.append(label_entropy(lab.counts))
        except MetricUndefined:
            skipped += 1
    if not ents:
        raise MetricUndefined("no story has annotations")
    h = float(np.mean(ents))
    return LabelStats(h, float(np.mean(np.exp2(ents))), float(2.0**h), len(ents), skipped)


def baseline_scores(n: int, kind: str, rng: RngState | None = None) -> list[float]:
    if kind == "increasing":
        return [float(i) for i in range(1, n + 1)]
    if kind == "decreasing":
        return [-float(i) for i in range(1, n + 1)]
    if kind == "random":
        if rng is None:
            raise ValueError("the random baseline needs an RngState")
        return [float(x) for x in rng.random(n)]
    raise ValueError(f"unknown baseline {kind!r}")


# -- corpus-level report -----------------------------------------------------


@dataclass
class MetricSummary:
    mean: float | None
    std: float | None
    n: int
    skipped: int
    skip_reasons: dict[str, int] = field(default_factory=dict)


@dataclass
class SystemResult:
    name: str
    rho: MetricSummary | None
    auc: MetricSummary
    per_story_rho: dict[str, float]
    per_story_auc: dict[str, float]
    tp_auc: dict[str, MetricSummary] = field(default_factory=dict)


@dataclass
class PairTest:
    metric: str
    a: str
    b: str
    mean_a: float
    mean_b: float
    stories: int
    p_value: float
    significant: bool


@dataclass
class EvalReport:
    mode: str
    alpha: float
    n_perm: int
    stories: int
    systems: list[SystemResult]
    tests: list[PairTest]
    window_skip_rate: float | None = None
    windows: int | None = None

    def system(self, name: str) -> SystemResult:
        for s in self.systems:
            if s.name == name:
                return s
        raise KeyError(name)


def _summary(values: list[float], reasons: dict[str, int]) -> MetricSummary:
    skipped = sum(reasons.values())
    if not values:
        return MetricSummary(None, None, 0, skipped, reasons)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return MetricSummary(float(np.mean(values)), std, len(values), skipped, reasons)


def _story_metrics(name: str, preds: Mapping[str, Sequence[float]], labels: Mapping[str, SalienceLabels],
                   windows: int | None) -> SystemResult:
    rho_vals, auc_vals, rho_reasons, auc_reasons = {}, {}, {}, {}
    tp_vals: dict[int, list[float]] = {t: [] for t in range(1, 6)}
    for sid, lab in labels.items():
        if sid not in preds:
            continue
        pred = preds[sid]
        if windows is None:
            try:
                rho_vals[sid] = spearman_rho(pred, lab.counts)
            except MetricUndefined as e:
                rho_reasons[str(e)] = rho_reasons.get(str(e), 0) + 1
            try:
                auc_vals[sid] = auc(pred, lab.relevant)
            except MetricUndefined as e:
                auc_reasons[str(e)] = auc_reasons.get(str(e), 0) + 1
        else:
            if len(pred) < windows:
                auc_reasons["fewer sentences than windows"] = auc_reasons.get("fewer sentences than windows", 0) + 1
                continue
            res = window_auc(pred, lab, make_windows(len(pred), windows))
            if res.kept:
                auc_vals[sid] = float(np.mean(res.kept))
            else:
                auc_reasons["no labelled window"] = auc_reasons.get("no labelled window", 0) + 1
            for v, types in zip(res.values, res.tp_types):
                if v is not None:
                    for t in types:
                        tp_vals[t].append(v)
    tp = {}
    if windows is not None:
        tp = {f"TP{t}": _summary(v, {}) for t, v in tp_vals.items() if v}
    return SystemResult(
        name=name,
        rho=None if windows is not None else _summary(list(rho_vals.values()), rho_reasons),
        auc=_summary(list(auc_vals.values()), auc_reasons),
        per_story_rho=rho_vals,
        per_story_auc=auc_vals,
        tp_auc=tp,
    )


def window_skip_rate(labels, windows: int) -> float | None:
    """Fraction of windows (over stories with at least ``windows`` sentences)
    that hold no turning point."""
    total = skipped = 0
    for lab in labels:
        n = len(lab.counts)
        if n < windows:
            continue
        tps = [t.sentence for t in lab.turning_points or ()]
        for s, e in make_windows(n, windows):
            total += 1
            skipped += not any(s <= t <= e for t in tps)
    return skipped / total if total else None


def evaluate(scores: Mapping[str, Mapping[str, Sequence[float]]], labels: Sequence[SalienceLabels], *,
             windows: int | None = None, alpha: float = 0.05, n_perm: int = 10_000, seed: int = 0,
             operations: Sequence[str] = OPERATIONS, baselines: Sequence[str] = BASELINES) -> EvalReport:
    """Macro-averaged metrics per operation and baseline, plus pairwise permutation tests.

    ``scores`` maps story id -> operation -> per-sentence scores. With
    ``windows`` set, turning-point window AUC replaces ρ/AUC.
    """
    by_id = {lab.id: lab for lab in labels}
    stories = [sid for sid in by_id if sid in scores]
    if not stories:
        raise ValueError("no story appears in both the scores and the labels")
    for sid in stories:
        n = len(by_id[sid].counts)
        for op, vals in scores[sid].items():
            if len(vals) != n:
                raise ValueError(f"story {sid!r}: {op} has {len(vals)} scores, labels have {n} sentences")
    used = {sid: by_id[sid] for sid in stories}
    systems = []
    for op in operations:
        preds = {sid: scores[sid][op] for sid in stories if op in scores[sid]}
        if not preds:
            continue
        systems.append(_story_metrics(op, preds, used, windows))
    rng = RngState(seed, "random-baseline")
    for kind in baselines:
        preds = {sid: baseline_scores(len(used[sid].counts), kind, rng) for sid in stories}
        systems.append(_story_metrics(kind, preds, used, windows))

    tests = []
    metrics = ("auc",) if windows is not None else ("rho", "auc")
    for metric in metrics:
        for x, y in combinations(systems, 2):
            va = getattr(x, f"per_story_{metric}")
            vb = getattr(y, f"per_story_{metric}")
            common = [sid for sid in va if sid in vb]
            if not common:
                continue
            a = [va[s] for s in common]
            b = [vb[s] for s in common]
            p = paired_permutation_test(a, b, n_perm, seed)
            tests.append(PairTest(metric, x.name, y.name, float(np.mean(a)), float(np.mean(b)), len(common),
                                  p, p < alpha))
    rate = window_skip_rate(used.values(), windows) if windows is not None else None
    return EvalReport("window" if windows else "story", alpha, n_perm, len(stories), systems, tests, rate, windows)


def _fmt(m: MetricSummary | None) -> str:
    if m is None or m.mean is None:
        return "      -      "
    return f"{m.mean:6.3f} ±{m.std:5.3f}"


def format_table(report: EvalReport) -> str:
    lines = []
    if report.mode == "story":
        lines.append(f"{'system':<14} {'rho':>13} {'AUC':>13}  n")
        for s in report.systems:
            lines.append(f"{s.name:<14} {_fmt(s.rho):>13} {_fmt(s.auc):>13}  {s.auc.n}")
    else:
        lines.append(f"{'system':<14} {'window AUC':>13}  n   " + " ".join(f"{f'TP{t}':>6}" for t in range(1, 6)))
        for s in report.systems:
            tps = " ".join(
                f"{s.tp_auc[f'TP{t}'].mean:6.3f}" if f"TP{t}" in s.tp_auc else "     -" for t in range(1, 6)
            )
            lines.append(f"{s.name:<14} {_fmt(s.auc):>13}  {s.auc.n:<3} {tps}")
        if report.window_skip_rate is not None:
            lines.append(f"skipped windows: {report.window_skip_rate:.1%}")
    sig = [t for t in report.tests if t.significant]
    lines.append(f"significant pairs (alpha={report.alpha}, n_perm={report.n_perm}): {len(sig)} of {len(report.tests)}")
    for t in sig:
        better = t.a if t.mean_a > t.mean_b else t.b
        lines.append(f"  {t.metric}: {t.a} vs {t.b}  p={t.p_value:.4g}  ({better} higher)")
    return "\n".join(lines)
