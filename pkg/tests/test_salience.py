import numpy as np
import pytest

from narrative_salience.alignment import make_windows
from narrative_salience.encoder import Encoder, EncoderConfig, cosine_similarity
from narrative_salience.salience import (
    OPERATIONS, CountingEncoder, SalienceReport, rank_descending, score_deletion, score_disruption, score_shifting,
    score_story, score_summarization, score_windowed, shift_orders,
)
from narrative_salience.text import BOS

from conftest import random_sentences


def tok_mean(enc, ids, positions=None):
    """Mean of contextual vectors at ``positions`` (default: every non-BOS token)."""
    h = enc.encode_tokens(list(ids))
    if positions is None:
        positions = range(1, len(ids))
    return h[list(positions)].mean(axis=0)


def sentences_of(story):
    return [list(story.token_ids[j : k + 1]) for j, k in story.spans]


def join(parts):
    return [BOS] + [t for p in parts for t in p]


@pytest.fixture
def story5(make_story):
    return make_story(["the cat sat on a mat .", "a dog ran .", "the big red fox jumped over a log !",
                       "sun and moon .", "the lazy hat sat ."])


# -- story level oracles -----------------------------------------------------


def test_deletion_matches_oracle(small_encoder, story5):
    parts = sentences_of(story5)
    full = tok_mean(small_encoder, story5.token_ids)
    expect = [1 - cosine_similarity(full, tok_mean(small_encoder, join(parts[:i] + parts[i + 1 :])))
              for i in range(5)]
    np.testing.assert_allclose(score_deletion(story5, small_encoder), expect, rtol=0, atol=1e-12)


def test_summarization_matches_oracle(small_encoder, story5):
    full = tok_mean(small_encoder, story5.token_ids)
    expect = [cosine_similarity(full, tok_mean(small_encoder, [BOS] + p)) for p in sentences_of(story5)]
    np.testing.assert_allclose(score_summarization(story5, small_encoder), expect, rtol=0, atol=1e-12)
    ctx = score_summarization(story5, small_encoder, contextual=True)
    h = small_encoder.encode_tokens(story5.token_ids)
    expect_ctx = [cosine_similarity(full, h[j : k + 1].mean(axis=0)) for j, k in story5.spans]
    np.testing.assert_allclose(ctx, expect_ctx, rtol=0, atol=1e-12)


def test_disruption_matches_oracle(small_encoder, story5):
    ids = story5.token_ids
    expect = []
    for j, k in story5.spans:
        upto = tok_mean(small_encoder, ids[: k + 1])
        before = small_encoder.encode_tokens(list(ids[:j]))
        before = before[1:].mean(axis=0) if j > 1 else before[0]
        expect.append(1 - cosine_similarity(upto, before))
    got = score_disruption(story5, small_encoder)
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)
    assert np.isfinite(got[0])


def _brute_shift_orders(n, i, include_end=True):
    rest = [s for s in range(n) if s != i]
    slots = range(n) if include_end else range(n - 1)
    orders = {tuple(rest[:p] + [i] + rest[p:]) for p in slots}
    orders.discard(tuple(range(n)))
    return orders


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_shift_orders_match_enumeration(n):
    for i in range(n):
        assert set(shift_orders(n, i)) == _brute_shift_orders(n, i)
        assert len(shift_orders(n, i)) == len(set(shift_orders(n, i)))
        assert set(shift_orders(n, i, include_end=False)) == _brute_shift_orders(n, i, include_end=False)


def test_shifting_matches_enumeration_oracle(small_encoder, make_story):
    story = make_story(["the cat sat .", "a dog ran on a log .", "big red sun !", "the moon ."])
    parts = sentences_of(story)
    full = tok_mean(small_encoder, story.token_ids)
    expect = []
    for i in range(4):
        sims = [cosine_similarity(full, tok_mean(small_encoder, join([parts[s] for s in o])))
                for o in _brute_shift_orders(4, i)]
        expect.append(1 - np.mean(sims))
    np.testing.assert_allclose(score_shifting(story, small_encoder), expect, rtol=0, atol=1e-12)


def test_two_sentence_shift_is_one_swap(small_encoder, make_story):
    story = make_story(["the cat sat .", "a dog ran ."])
    assert shift_orders(2, 0) == [(1, 0)] and shift_orders(2, 1) == [(1, 0)]
    s = score_shifting(story, small_encoder)
    assert s[0] == s[1]


def test_identical_sentences(small_encoder, make_story):
    story = make_story(["the cat sat ."] * 2)
    d = score_deletion(story, small_encoder)
    assert abs(d[0] - d[1]) < 1e-10
    sm = score_summarization(story, small_encoder)
    assert abs(sm[0] - sm[1]) < 1e-10
    same = make_story(["the cat sat ."] * 4)
    np.testing.assert_allclose(score_shifting(same, small_encoder), 0.0, atol=1e-12)


def test_single_sentence_story(small_encoder, make_story):
    story = make_story(["the cat sat on a mat ."])
    assert score_summarization(story, small_encoder)[0] == pytest.approx(1.0, abs=1e-12)
    assert np.isfinite(score_disruption(story, small_encoder)[0])
    for fn in (score_deletion, score_shifting):
        with pytest.raises(ValueError, match="two sentences"):
            fn(story, small_encoder)


def _constant_encoder(vocab):
    enc = Encoder.init(EncoderConfig(vocab_size=len(vocab), dim=8, heads=2, ff_dim=8, max_len=64), seed=0)
    row = np.linspace(-1.0, 1.0, 8)
    enc.params["tok_emb"].data[:] = row
    enc.params["pos_emb"].data[:] = 0.0
    enc.params["emb_ln.b"].data[:] = np.linspace(0.5, 1.5, 8)
    for name, p in enc.params.items():
        if name.split(".")[-1] in ("wv", "wo"):
            p.data[:] = 0.0
    return enc


def test_constant_encoder_gives_zero_scores(vocab, make_story):
    enc = _constant_encoder(vocab)
    story = make_story(["the cat sat .", "a dog ran on a log .", "big sun ."])
    v = enc.encode_tokens(story.token_ids)
    assert np.linalg.norm(v[0]) > 0 and np.allclose(v, v[0])
    for fn in (score_deletion, score_shifting, score_disruption):
        np.testing.assert_allclose(fn(story, enc), 0.0, atol=1e-12)
    np.testing.assert_allclose(score_summarization(story, enc), 1.0, atol=1e-12)


def _bag_encoder(vocab, dim=8):
    """Token vectors depend only on the token: no positions, attention or feed-forward."""
    enc = Encoder.init(EncoderConfig(vocab_size=len(vocab), dim=dim, heads=2, ff_dim=8, max_len=64), seed=5)
    enc.params["pos_emb"].data[:] = 0.0
    for name, p in enc.params.items():
        if name.split(".")[-1] in ("wv", "wo", "bv", "bo", "w1", "w2", "b1", "b2"):
            p.data[:] = 0.0
    return enc


def test_disruption_bag_of_embeddings(vocab, make_story):
    enc = _bag_encoder(vocab)
    g = {t: enc.encode_tokens([t])[0] for t in range(len(vocab))}
    story = make_story(["the cat sat .", "the cat .", "big red fox jumped !"])
    s = score_disruption(story, enc)
    # arithmetic oracle: prefix embeddings are plain means of per-token vectors
    ids = story.token_ids
    for i, (j, k) in enumerate(story.spans):
        upto = np.mean([g[t] for t in ids[1 : k + 1]], axis=0)
        before = np.mean([g[t] for t in ids[1:j]], axis=0) if j > 1 else g[BOS]
        assert s[i] == pytest.approx(1 - cosine_similarity(upto, before), abs=1e-12)
    assert s[1] < s[2]


def test_repeated_final_sentence_scores_lower(vocab, make_story):
    """Verbatim repeat vs an all-new sentence of equal length, on a 64-dim mean-pooling bag encoder."""
    from conftest import WORDS

    enc = _bag_encoder(vocab, dim=64)
    rng = np.random.default_rng(0)
    for _ in range(200):
        perm = [str(w) for w in rng.permutation(WORDS)]
        base = [" ".join(perm[0:4]), " ".join(perm[4:8]), " ".join(perm[8:12])]
        repeated = score_disruption(make_story(base + [base[-1]]), enc)[3]
        novel = score_disruption(make_story(base + [" ".join(perm[12:16])]), enc)[3]
        assert repeated <= novel


# -- call counts -------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 5])
def test_encoder_call_counts(small_encoder, make_story, n):
    story = make_story(random_sentences(np.random.default_rng(n), n))
    c = CountingEncoder(small_encoder)
    score_deletion(story, c)
    assert c.calls == n + 1
    c.calls = 0
    score_shifting(story, c)
    assert c.calls == 1 + sum(len(shift_orders(n, i)) for i in range(n)) == 1 + n * (n - 1)
    c.calls = 0
    score_disruption(story, c)
    assert c.calls == 2 * n
    c.calls = 0
    score_summarization(story, c)
    assert c.calls == n + 1


# -- window level ------------------------------------------------------------


@pytest.mark.parametrize("op", ["deletion", "summarization", "shifting", "disruption"])
def test_one_window_reduces_to_story_level(small_encoder, story5, op):
    got = score_windowed(story5, [(1, 5)], small_encoder, op)
    ref = score_story(story5, small_encoder, [op]).scores[op]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-10)


def test_deleting_in_window_three_keeps_earlier_tokens(make_story):
    story = make_story(random_sentences(np.random.default_rng(0), 20))
    part = make_windows(20, 5)
    cut = story.spans[part[1][1] - 1][1]  # last token of window 2
    parts = sentences_of(story)
    for i in range(part[2][0] - 1, part[2][1]):
        deleted = join(parts[:i] + parts[i + 1 :])
        assert deleted[: cut + 1] == list(story.token_ids[: cut + 1])


def _window_oracle(enc, story, partition, op):
    """Direct re-implementation over token positions recomputed from sentence lengths."""
    parts = sentences_of(story)
    n = len(parts)
    owner = {i: w for w, (a, b) in enumerate(partition) for i in range(a - 1, b)}

    def win_pool(order, members, limit=None):
        ids, pos, cursor = [BOS], [], 1
        for s in order:
            ids += parts[s]
            if s in members:
                pos += list(range(cursor, cursor + len(parts[s])))
            cursor += len(parts[s])
        if limit is not None:
            ids = ids[:limit]
            pos = [p for p in pos if p < limit]
        return tok_mean(enc, ids, pos)

    natural = list(range(n))
    out = []
    for i in natural:
        a, b = partition[owner[i]]
        members = set(range(a - 1, b))
        base = win_pool(natural, members)
        if op == "deletion":
            out.append(1 - cosine_similarity(base, win_pool([s for s in natural if s != i], members)))
        elif op == "summarization":
            out.append(cosine_similarity(base, tok_mean(enc, [BOS] + parts[i])))
        elif op == "disruption":
            start = 1 + sum(len(p) for p in parts[:i])
            upto = win_pool(natural, members & set(range(i + 1)), start + len(parts[i]))
            prior = set(range(a - 1, i))
            if prior:
                before = win_pool(natural, prior, start)
            else:
                # no window token precedes sentence i: pool the whole prefix (BOS alone if empty)
                prefix = join(parts[:i])
                before = tok_mean(enc, prefix) if len(prefix) > 1 else tok_mean(enc, prefix, [0])
            out.append(1 - cosine_similarity(upto, before))
        elif op == "shifting":
            rest = [s for s in natural if s != i]
            orders = set()
            for t in sorted(members - {i}):
                p = rest.index(t)
                orders.add(tuple(rest[:p] + [i] + rest[p:]))
            last = b - 1
            if last != i:
                p = rest.index(last) + 1
                orders.add(tuple(rest[:p] + [i] + rest[p:]))
            orders.discard(tuple(natural))
            sims = [cosine_similarity(base, win_pool(list(o), members)) for o in orders]
            out.append(1 - np.mean(sims) if sims else 0.0)
    return out


@pytest.mark.parametrize("op", OPERATIONS)
def test_windowed_scores_match_oracle(small_encoder, make_story, op):
    story = make_story(random_sentences(np.random.default_rng(11), 20, 2, 4))
    part = make_windows(20, 5)
    got = score_windowed(story, part, small_encoder, op)
    np.testing.assert_allclose(got, _window_oracle(small_encoder, story, part, op), rtol=0, atol=1e-10)


def test_window_partition_errors(small_encoder, story5):
    with pytest.raises(ValueError):
        score_windowed(story5, [(1, 2), (4, 5)], small_encoder, "deletion")
    with pytest.raises(ValueError, match="unknown"):
        score_windowed(story5, [(1, 5)], small_encoder, "paraphrase")


# -- reports and properties --------------------------------------------------


def test_scores_in_range_and_deterministic(small_encoder, make_story):
    rng = np.random.default_rng(2)
    for _ in range(5):
        story = make_story(random_sentences(rng, int(rng.integers(2, 7))))
        rep = score_story(story, small_encoder)
        again = score_story(story, small_encoder)
        assert rep.scores == again.scores
        for op in ("deletion", "shifting", "disruption"):
            assert all(0.0 <= s <= 2.0 for s in rep.scores[op])
        assert all(-1.0 <= s <= 1.0 for s in rep.scores["summarization"])


def test_story_id_does_not_change_scores(small_encoder, make_story):
    sents = random_sentences(np.random.default_rng(4), 4)
    a = score_story(make_story(sents, "x"), small_encoder)
    b = score_story(make_story(sents, "renamed"), small_encoder)
    assert a.scores == b.scores and b.story_id == "renamed"


def test_ranks_average_ties():
    assert rank_descending([0.1, 0.5, 0.5, 0.2]) == [4.0, 1.5, 1.5, 3.0]
    rep = SalienceReport("s", {"deletion": [0.3, 0.1, 0.2]})
    assert rep.ranks["deletion"] == [1.0, 3.0, 2.0]
    rows = rep.rows()
    assert rows[0]["sentence_idx"] == 1 and np.isnan(rows[0]["shifting"])
    with pytest.raises(ValueError):
        SalienceReport("s", {"deletion": [0.1], "shifting": [0.1, 0.2]})


def test_every_two_window_split_scores_all_sentences(small_encoder, make_story):
    """Every valid 2-window split of a 4-sentence story scores all sentences."""
    story = make_story(random_sentences(np.random.default_rng(9), 4))
    for cut in range(1, 4):
        part = [(1, cut), (cut + 1, 4)]
        for op in OPERATIONS:
            s = score_windowed(story, part, small_encoder, op)
            assert len(s) == 4 and all(np.isfinite(s))
