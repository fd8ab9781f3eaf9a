import time

import numpy as np
import pytest

from narrative_salience.alignment import (
    Alignment, align_example, check_path, dtw_align, filter_twins, lexical_similarities, make_windows, passes_filter,
    path_score, project_windows, sentence_similarities, window_sizes,
)

from conftest import random_sentences


def all_paths(n, m):
    """Every monotonic path from (1,1) to (n,m) with unit right/down/diagonal steps."""
    out = []

    def walk(i, j, acc):
        if (i, j) == (n, m):
            out.append(acc)
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di <= n and j + dj <= m:
                walk(i + di, j + dj, acc + [(i + di, j + dj)])

    walk(1, 1, [(1, 1)])
    return out


def brute_best(sim):
    n, m = sim.shape
    return max(sum(sim[i - 1, j - 1] for i, j in p) for p in all_paths(n, m))


def test_all_paths_counts_delannoy():
    # Delannoy numbers D(n-1, m-1)
    assert [len(all_paths(k, k)) for k in range(1, 5)] == [1, 3, 13, 63]
    assert len(all_paths(3, 4)) == 25


def test_dtw_matches_brute_force():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m = rng.integers(1, 7, 2)
        sim = rng.uniform(-1, 1, (n, m))
        path = dtw_align(sim)
        check_path(path, n, m)
        assert abs(path_score(sim, path) - brute_best(sim)) < 1e-12
    assert time.perf_counter() - start < 10


def test_dtw_random_4x5():
    rng = np.random.default_rng(1)
    for _ in range(100):
        sim = rng.uniform(-1, 1, (4, 5))
        assert abs(path_score(sim, dtw_align(sim)) - brute_best(sim)) < 1e-12


def test_single_row_visits_every_column():
    assert dtw_align(np.array([[0.1, -0.5, 0.3, 0.0]])) == [(1, 1), (1, 2), (1, 3), (1, 4)]
    assert dtw_align(np.array([[0.2], [0.4]])) == [(1, 1), (2, 1)]


def test_identity_matrix_gives_diagonal():
    path = dtw_align(np.eye(3))
    assert path == [(1, 1), (2, 2), (3, 3)]
    assert path_score(np.eye(3), path) == 3.0


def test_ties_prefer_diagonal():
    assert dtw_align(np.zeros((3, 3))) == [(1, 1), (2, 2), (3, 3)]
    assert dtw_align(np.zeros((2, 3))) == [(1, 1), (1, 2), (2, 3)]


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        dtw_align(np.zeros((0, 3)))


def test_check_path_rejects_jumps():
    with pytest.raises(ValueError, match="invalid step"):
        check_path([(1, 1), (3, 3)], 3, 3)
    with pytest.raises(ValueError):
        check_path([(1, 1), (2, 2)], 3, 3)


# -- windows -----------------------------------------------------------------


def test_make_windows_examples():
    assert make_windows(20, 5) == ((1, 4), (5, 8), (9, 12), (13, 16), (17, 20))
    assert window_sizes(make_windows(23, 5)) == [5, 5, 5, 4, 4]
    assert make_windows(5, 5) == tuple((i, i) for i in range(1, 6))
    with pytest.raises(ValueError):
        make_windows(4, 5)


def test_make_windows_is_total_and_even():
    for n in range(1, 60):
        for w in range(1, n + 1):
            part = make_windows(n, w)
            sizes = window_sizes(part)
            assert part[0][0] == 1 and part[-1][1] == n and len(part) == w
            assert all(b[0] == a[1] + 1 for a, b in zip(part, part[1:]))
            assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)


def test_project_identity_and_single_sentence():
    part = make_windows(10, 2)
    assert project_windows([(i, i) for i in range(1, 11)], part) == part
    # every anchor sentence of window 1 maps to twin sentence 1
    path = [(1, 1), (2, 1), (3, 1), (4, 2), (5, 3)]
    assert project_windows(path, ((1, 3), (4, 5))) == ((1, 1), (2, 3))


def random_path(rng, n, m):
    path, i, j = [(1, 1)], 1, 1
    while (i, j) != (n, m):
        steps = [(di, dj) for di, dj in ((1, 0), (0, 1), (1, 1)) if i + di <= n and j + dj <= m]
        di, dj = steps[rng.integers(len(steps))]
        i, j = i + di, j + dj
        path.append((i, j))
    return path


def test_project_matches_set_recomputation():
    rng = np.random.default_rng(7)
    part = make_windows(10, 2)
    for _ in range(50):
        path = random_path(rng, 10, 10)
        claimed = []
        taken = set()
        for s, e in part:
            js = {j for i, j in path if s <= i <= e}
            span = set(range(min(js), max(js) + 1)) - taken
            taken |= span
            claimed.append(span)
        got = project_windows(path, part)
        for (s, e), span in zip(got, claimed):
            assert set(range(s, e + 1)) == span


def test_projection_tiles_twin():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n, m = rng.integers(5, 25, 2)
        part = make_windows(n, 5)
        tw = project_windows(random_path(rng, n, m), part)
        covered = [j for s, e in tw for j in range(s, e + 1)]
        assert covered == list(range(1, m + 1))


# -- filtering ---------------------------------------------------------------


def _alignment(twin_sizes, anchor_len=20):
    tw, start = [], 1
    for size in twin_sizes:
        tw.append((start, start + size - 1))
        start += size
    m = start - 1
    path = tuple(random_path(np.random.default_rng(0), anchor_len, m))
    return Alignment("x", path, make_windows(anchor_len, 5), tuple(tw), True)


def test_filter_boundaries():
    keep = _alignment([3, 3, 3, 3, 3])
    drop = _alignment([3, 3, 2, 3, 3])
    short = _alignment([4, 4, 4, 4, 4], anchor_len=19)
    assert filter_twins([keep, drop, short]) == [keep]
    assert passes_filter(_alignment([3] * 5, anchor_len=29))
    assert not passes_filter(_alignment([3] * 5, anchor_len=30))  # |15 - 30| > 14
    assert passes_filter(_alignment([3] * 5, anchor_len=30), twin_length_band=None)


def test_align_example_drops_too_short(make_story):
    rng = np.random.default_rng(0)
    sents = random_sentences(rng, 19)
    al = align_example(make_story(sents), make_story(sents))
    assert not al.kept
    full = random_sentences(rng, 20)
    ok = align_example(make_story(full), make_story(full))
    # with non-negative similarities the max-sum path zigzags, so windows may shift by one
    assert ok.kept
    assert [j for a, b in ok.twin_windows for j in range(a, b + 1)] == list(range(1, 21))


def test_lexical_similarities():
    s = lexical_similarities(["the cat sat", "a dog"], ["a dog", "the cat", "zebra"])
    assert s.shape == (2, 3)
    assert s[1, 0] == pytest.approx(1.0) and s[0, 2] == 0.0
    assert s[0, 1] == pytest.approx(2 / np.sqrt(6))


def test_encoder_similarities_shape_and_range(small_encoder, make_story):
    a = make_story(["the cat sat .", "a dog ran .", "big sun"])
    b = make_story(["the moon !"])
    s = sentence_similarities(a, b, small_encoder)
    assert s.shape == (3, 1) and np.all(np.abs(s) <= 1.0)
    one = sentence_similarities(b, b, small_encoder)
    assert one.shape == (1, 1) and one[0, 0] == pytest.approx(1.0)


def test_alignment_record_round_trip():
    al = _alignment([3, 3, 3, 3, 3])
    assert Alignment.from_record(al.to_record()) == al
    assert set(al.to_record()) == {"id", "path", "anchor_windows", "twin_windows", "kept"}
