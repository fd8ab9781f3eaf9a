"""Command-line entry point: ``narrative-salience <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .alignment import Alignment, align_example
from .evaluation import evaluate, format_table, label_stats
from .salience import OPERATIONS, score_story
from .text import tokenize_story

log = logging.getLogger("narrative_salience")


def _cmd_synth(args) -> int:
    from .synthetic import SynthSpec, generate_synthetic

    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = SynthSpec(**{**spec.__dict__, "seed": args.seed})
    corpus, labels = generate_synthetic(spec)
    io.write_corpus(args.out, corpus)
    if args.labels:
        io.write_labels(args.labels, labels)
    print(f"wrote {len(corpus)} stories to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .text import build_vocab
    from .training import TrainConfig, attach_alignments, corpus_texts, tokenize_example, train

    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else TrainConfig()
    corpus = io.read_corpus(args.corpus)
    windows = None
    vocab = None
    dropped: list[str] = []
    if args.alignments:
        if not cfg.window_level:
            raise SystemExit("--alignments only applies to window-level training (window_level: true)")
        vocab = build_vocab(corpus_texts(corpus), cfg.min_count)
        alignments = [Alignment.from_record(r) for r in io.read_jsonl(args.alignments)]
        windows, dropped = attach_alignments([tokenize_example(ex, vocab) for ex in corpus], alignments, cfg)
        log.info("alignments keep %d of %d examples", len(windows), len(corpus))
    out = Path(args.out_dir)
    result = train(corpus, cfg, out, vocab=vocab, windows=windows)
    dropped += result.dropped
    if dropped:
        (out / "dropped.txt").write_text("\n".join(dropped) + "\n")
    if args.figures and result.losses:
        from .plotting import plot_loss_curve

        plot_loss_curve(result.losses, out / "loss.png", title=f"{cfg.mode} loss")
    final = result.losses[-1][1] if result.losses else float("nan")
    print(f"{len(result.losses)} steps, final loss {final:.4f}; checkpoints in {out}")
    return 0


def _cmd_score(args) -> int:
    from .alignment import make_windows
    from .training import load_trained

    encoder, vocab = load_trained(args.checkpoint)
    corpus = io.read_corpus(args.corpus)
    ops = args.operations.split(",") if args.operations else list(OPERATIONS)
    unknown = [o for o in ops if o not in OPERATIONS]
    if unknown:
        raise SystemExit(f"unknown operations: {unknown}")
    rows, report = [], {}
    for ex in corpus:
        story = tokenize_story(ex.anchor, vocab, ex.id)
        part = None
        if args.windows:
            if story.n_sentences < args.windows:
                log.warning("skipping %s: %d sentences < %d windows", ex.id, story.n_sentences, args.windows)
                continue
            part = make_windows(story.n_sentences, args.windows)
        rep = score_story(story, encoder, ops, partition=part, include_end=not args.no_end_placement,
                          contextual_summary=args.contextual_summary)
        rows.extend(rep.rows())
        report[ex.id] = {"scores": rep.scores, "ranks": rep.ranks}
    io.write_scores_csv(args.out, rows)
    if args.report:
        io.write_report(args.report, {"checkpoint": str(args.checkpoint), "windows": args.windows,
                                      "operations": ops, "stories": report})
    print(f"scored {len(report)} stories -> {args.out}")
    return 0


def _cmd_align(args) -> int:
    from .text import build_vocab
    from .training import corpus_texts, load_trained

    corpus = io.read_corpus(args.corpus)
    encoder = None
    if args.similarity == "encoder":
        if not args.checkpoint:
            raise SystemExit("--similarity encoder needs --checkpoint")
        encoder, vocab = load_trained(args.checkpoint)
    else:
        vocab = build_vocab(corpus_texts(corpus))
    records, kept = [], 0
    for ex in corpus:
        if ex.twin is None:
            log.warning("skipping %s: no twin", ex.id)
            continue
        al = align_example(tokenize_story(ex.anchor, vocab, ex.id), tokenize_story(ex.twin, vocab, ex.id),
                           args.windows, encoder=encoder, min_twin_window=args.min_twin_window,
                           min_anchor_sentences=args.min_anchor_sentences,
                           twin_length_band=args.twin_length_band, example_id=ex.id)
        kept += al.kept
        records.append(al.to_record())
    io.write_jsonl(args.out, records)
    print(f"aligned {len(records)} stories, kept {kept}")
    return 0


def _cmd_eval(args) -> int:
    labels = io.read_labels(args.labels)
    merged: dict[str, dict[str, list[float]]] = {}
    operations: list[str] = []
    for path in args.scores:
        scores = io.read_scores_csv(path)
        prefix = f"{Path(path).stem}:" if len(args.scores) > 1 else ""
        for sid, per_op in scores.items():
            for op, vals in per_op.items():
                name = prefix + op
                merged.setdefault(sid, {})[name] = vals
                if name not in operations:
                    operations.append(name)
    report = evaluate(merged, labels, windows=args.windows, alpha=args.alpha, n_perm=args.n_perm,
                      seed=args.seed, operations=operations)
    if args.out:
        io.write_report(args.out, report)
    print(format_table(report))
    if args.figures:
        from .plotting import report_figures

        for p in report_figures(report, args.figures):
            log.info("wrote %s", p)
    return 0


def _cmd_gen_twins(args) -> int:
    from .genclient import TARGET_FIELD, GenClientConfig, llm_generate_twins

    cfg = GenClientConfig(endpoint=args.endpoint, model=args.model, temperature=args.temperature,
                          max_retries=args.max_retries, timeout=args.timeout, concurrency=args.concurrency)
    records = io.read_jsonl(args.inp)
    out = llm_generate_twins(records, cfg, args.kind)
    io.write_jsonl(args.out, out)
    target = TARGET_FIELD[args.kind]
    failed = sum(1 for r in out if not r.get(target))
    print(f"{len(out)} records written, {failed} without {target!r}")
    return 1 if failed == len(out) else 0


def _cmd_label_stats(args) -> int:
    stats = label_stats(io.read_labels(args.labels))
    if args.out:
        io.write_report(args.out, stats)
    print(f"stories: {stats.stories} (skipped {stats.skipped})")
    print(f"mean entropy: {stats.mean_entropy:.3f} bits")
    print(f"mean perplexity: {stats.mean_perplexity:.3f}")
    print(f"perplexity of mean entropy: {stats.perplexity_of_mean_entropy:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="narrative-salience", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus with known salient sentences")
    s.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--out", required=True)
    s.add_argument("--labels")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("train", help="train an encoder")
    s.add_argument("--config", help="JSON file with TrainConfig fields")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--alignments", help="alignment JSONL from `align` (window-level training)")
    s.add_argument("--figures", action="store_true", help="write loss.png next to metrics.csv")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("score", help="score sentence salience with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="CSV output")
    s.add_argument("--report", help="JSON report with scores and rankings")
    s.add_argument("--operations", help=f"comma-separated subset of {','.join(OPERATIONS)}")
    s.add_argument("--windows", type=int, help="score per window with this many windows")
    s.add_argument("--no-end-placement", action="store_true", help="shifting: do not move sentences to the end")
    s.add_argument("--contextual-summary", action="store_true",
                   help="summarization: pool the sentence from the full-story pass")
    s.set_defaults(func=_cmd_score)

    s = sub.add_parser("align", help="DTW-align twins and project windows")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--similarity", choices=("encoder", "lexical"), default="encoder")
    s.add_argument("--checkpoint")
    s.add_argument("--windows", type=int, default=5)
    s.add_argument("--min-twin-window", type=int, default=3)
    s.add_argument("--min-anchor-sentences", type=int, default=20)
    s.add_argument("--twin-length-band", type=int, default=14)
    s.set_defaults(func=_cmd_align)

    s = sub.add_parser("eval", help="evaluate score CSVs against labels")
    s.add_argument("--scores", nargs="+", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", help="EvalReport JSON")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--n-perm", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--windows", type=int, help="turning-point window AUC with this many windows")
    s.add_argument("--figures", help="directory for metric figures")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("gen-twins", help="generate twins/distractors through a chat endpoint")
    s.add_argument("--kind", required=True, choices=("verbose", "retell", "negative", "wiki-negative"))
    s.add_argument("--endpoint", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--max-retries", type=int, default=3)
    s.add_argument("--timeout", type=float, default=120.0)
    s.add_argument("--concurrency", type=int, default=4)
    s.set_defaults(func=_cmd_gen_twins)

    s = sub.add_parser("label-stats", help="entropy/perplexity of annotator label distributions")
    s.add_argument("--labels", required=True)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_label_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.SchemaError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
