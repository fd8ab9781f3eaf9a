"""Templated stories with a known salient sentence.

Every story is built from four sentence kinds: a setup that introduces the
characters and place, filler events, one *peak* event per window, and a
resolution. The peak is the ground-truth salient sentence.

* twin: same characters and peak event (new wording), fresh filler and setup wording
* distractor: identical setup, filler and resolution, a different peak event

So a twin agrees with its anchor on the plot but not the surface, and a
distractor agrees on the surface but not the plot.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .rng import RngState
from .text import SalienceLabels, TrainingExample, TurningPoint

NAMES = (
    "anna ben carla dan emma felix gina hugo iris jack kate leo maria nick olga paul quinn rosa sam tina "
    "ursula victor wendy xavier yara zack alice bob cathy derek ella frank grace henry ivy james kim "
    "liam mona noah oscar penny ricky sara tom uma vera will zoe adam beth carl dora eric fay gus hana"
).split()
PLACES = (
    "park beach farm library market harbor school garden station museum cabin lake forest bakery "
    "stadium island village bridge castle theater hospital circus zoo mall river canyon desert office "
    "kitchen church"
).split()
TIMES = "morning evening afternoon weekend night summer winter holiday".split()
FILLER_VERBS = (
    "cleaned washed painted carried fixed checked counted folded moved opened closed sorted packed "
    "tidied watered polished stacked labeled measured wrapped"
).split()
FILLER_NOUNS = (
    "table chair window basket bottle blanket bucket shelf drawer plate cup towel box jar lamp rug "
    "fence gate bench ladder shirt hat bag book"
).split()
FILLER_ADVS = "slowly quietly carefully quickly calmly again gently neatly".split()
PEAK_AGENTS = (
    "storm fire flood thief dragon wolf bear earthquake tornado giant ghost snake shark bandit "
    "lightning avalanche"
).split()
PEAK_VERBS = (
    "destroyed stole burned attacked crushed swallowed flooded kidnapped smashed wrecked poisoned "
    "buried"
).split()
PEAK_TARGETS = (
    "house car boat treasure crown horse village bridge tower ship crops mayor wedding ring"
).split()
EMOTIONS = "happy tired calm relieved proud sleepy content glad".split()

SETUP_FRAMES = (
    "{name} and {friend} went to the {place} one {time} .",
    "one {time} , {name} visited the {place} with {friend} .",
    "{name} spent the {time} at the {place} with {friend} .",
    "{friend} and {name} arrived at the {place} that {time} .",
)
FILLER_FRAMES = (
    "{who} {verb} the {noun} {adv} .",
    "then {who} {verb} a {noun} .",
    "{who} {adv} {verb} the old {noun} .",
    "after that {who} {verb} the {noun} .",
)
PEAK_FRAMES = (
    "suddenly a {agent} {verb} the {target} !",
    "the {target} was {verb} by a {agent} .",
    "without warning a {agent} {verb} the {target} .",
    "then the {agent} {verb} their {target} !",
)
RESOLUTION_FRAMES = (
    "in the end {who} felt {emotion} .",
    "later {who} went home feeling {emotion} .",
    "{who} was {emotion} at the end of the day .",
)


@dataclass(frozen=True)
class SynthSpec:
    stories: int = 100
    min_sentences: int = 5
    max_sentences: int = 5
    windows: int = 1
    twin_jitter: int = 0
    seed: int = 0
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.stories < 0:
            raise ValueError("story count must be non-negative")
        if self.windows < 1:
            raise ValueError("need at least one window")
        if self.min_sentences < 3 * self.windows:
            raise ValueError("each window needs room for setup/filler, a peak and a resolution")
        if self.max_sentences < self.min_sentences:
            raise ValueError("max_sentences < min_sentences")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class _Event:
    kind: str
    fields: tuple


class _Writer:
    """Draws events and renders them to sentences."""

    def __init__(self, rng: RngState):
        self.rng = rng

    def pick(self, seq):
        return self.rng.choice(seq)

    def filler(self) -> _Event:
        return _Event("filler", (self.pick(FILLER_VERBS), self.pick(FILLER_NOUNS), self.pick(FILLER_ADVS)))

    def peak(self, avoid: tuple | None = None) -> _Event:
        while True:
            ev = (self.pick(PEAK_AGENTS), self.pick(PEAK_VERBS), self.pick(PEAK_TARGETS))
            if avoid is None or (ev[0] != avoid[0] and ev[2] != avoid[2]):
                return _Event("peak", ev)

    def render(self, ev: _Event, cast: dict) -> str:
        who = self.pick([cast["name"], cast["friend"], "they"])
        if ev.kind == "setup":
            return self.pick(SETUP_FRAMES).format(**cast)
        if ev.kind == "filler":
            verb, noun, adv = ev.fields
            return self.pick(FILLER_FRAMES).format(who=who, verb=verb, noun=noun, adv=adv)
        if ev.kind == "peak":
            agent, verb, target = ev.fields
            return self.pick(PEAK_FRAMES).format(agent=agent, verb=verb, target=target)
        if ev.kind == "resolution":
            return self.pick(RESOLUTION_FRAMES).format(who=who, emotion=ev.fields[0])
        raise ValueError(ev.kind)


def _window_sizes(n: int, windows: int) -> list[int]:
    base, extra = divmod(n, windows)
    return [base + (1 if w < extra else 0) for w in range(windows)]


def _plan(writer: _Writer, sizes: list[int]) -> tuple[list[_Event], list[int]]:
    """Event sequence and 0-based peak positions: setup first, resolution last,
    one peak inside every window, filler elsewhere."""
    events: list[_Event] = []
    peaks = []
    start = 0
    total = sum(sizes)
    for size in sizes:
        lo = start + 1 if start == 0 else start
        hi = start + size - 1
        if start + size == total:
            hi -= 1
        pos = int(writer.rng.integers(lo, hi + 1))
        peaks.append(pos)
        start += size
    peak_set = set(peaks)
    for i in range(total):
        if i == 0:
            events.append(_Event("setup", ()))
        elif i == total - 1:
            events.append(_Event("resolution", (writer.pick(EMOTIONS),)))
        elif i in peak_set:
            events.append(writer.peak())
        else:
            events.append(writer.filler())
    return events, peaks


def generate_synthetic(spec: SynthSpec) -> tuple[list[TrainingExample], list[SalienceLabels]]:
    """Return ``(corpus, labels)``; labels give the peak sentence 5 selections
    and, for windowed specs, one turning point per window."""
    rng = RngState(spec.seed, "synthetic")
    corpus, labels = [], []
    for s in range(spec.stories):
        w = _Writer(rng.child(f"story/{s}"))
        n = int(w.rng.integers(spec.min_sentences, spec.max_sentences + 1))
        name, friend = w.rng.choice(NAMES, size=2, replace=False)
        cast = {"name": name, "friend": friend, "place": w.pick(PLACES), "time": w.pick(TIMES)}
        sizes = _window_sizes(n, spec.windows)
        events, peaks = _plan(w, sizes)
        anchor = [w.render(ev, cast) for ev in events]

        # twin: same cast and peaks, freshly drawn filler and wording
        twin_sizes = sizes
        if spec.twin_jitter:
            twin_sizes = [max(3, sz + int(w.rng.integers(-spec.twin_jitter, spec.twin_jitter + 1))) for sz in sizes]
        twin_events, twin_peaks = _plan(w, twin_sizes)
        for src, dst in zip(peaks, twin_peaks):
            twin_events[dst] = events[src]
        twin_events[-1] = events[-1]
        twin = [w.render(ev, cast) for ev in twin_events]

        # distractor: same sentences except each peak is a different event
        distractor = list(anchor)
        for p in peaks:
            distractor[p] = w.render(w.peak(avoid=events[p].fields), cast)

        sid = f"{spec.id_prefix}-{s:05d}"
        corpus.append(TrainingExample(sid, tuple(anchor), tuple(twin), tuple(distractor)))
        counts = [0] * n
        for p in peaks:
            counts[p] = 5
        tps = None
        if spec.windows > 1:
            tps = tuple(TurningPoint(min(k + 1, 5), p + 1) for k, p in enumerate(peaks))
        labels.append(SalienceLabels(sid, tuple(counts), tps))
    return corpus, labels


def spec_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
