import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermite_flow.dynamics import init_student
from hermite_flow.hermite import hermite_activation
from hermite_flow.model import StudentState, TeacherModel, power_law_teacher
from hermite_flow.selection import (
    UNBOUNDED,
    GapStats,
    SelectionMap,
    cauchy_collision_probability,
    gap_stats,
    greedy_select,
    init_gap_distribution,
    kth_largest_frequency,
    score_matrix,
    select_from_state,
)


def brute_greedy(M, K):
    # removal loop written with plain python lists
    M = [list(row) for row in M]
    m, P = len(M), len(M[0])
    rows, cols = [], []
    for _ in range(K):
        best, arg = -1.0, None
        for k in range(m):
            for q in range(P):
                if k in rows or q in cols:
                    continue
                if M[k][q] > best:
                    best, arg = M[k][q], (k, q)
        rows.append(arg[0])
        cols.append(arg[1])
    return rows, cols


def slack_oracle(M, rows, cols, K):
    # double loop straight from the gap definitions
    m, P = M.shape
    S = M[np.ix_(rows + [k for k in range(m) if k not in rows], cols + [q for q in range(P) if q not in cols])]
    dr = dc = dt = math.inf
    for p in range(K):
        for q in range(p + 1, P):
            if S[p, q] > 0:
                dr = min(dr, max(S[p, p] / S[p, q] - 1, 0))
        for k in range(p + 1, m):
            if S[k, p] > 0:
                dc = min(dc, max(S[p, p] / S[k, p] - 1, 0))
    for k in range(K, m):
        for q in range(K, P):
            if S[k, q] > 0:
                dt = min(dt, max(S[K - 1, K - 1] / S[k, q] - 1, 0))
    return dr, dc, dt


def test_greedy_example_1():
    sel = greedy_select(np.array([[0.5, 0.4], [0.45, 0.2]]), 2)
    assert sel.pi == (0, 1)
    assert sel.student_order == (0, 1)


def test_greedy_example_2():
    sel = greedy_select(np.array([[0.3, 0.6], [0.2, 0.1]]), 2)
    assert sel.pi == (1, 0)
    assert sel.matched_students == (0, 1)


def test_greedy_ties_lowest_index():
    sel = greedy_select(np.ones((3, 3)), 2)
    assert sel.student_order == (0, 1, 2)
    assert sel.pi == (0, 1)
    assert sel.teacher_order == (0, 1, 2)


def test_greedy_rejects_bad_P_star():
    with pytest.raises(ValueError):
        greedy_select(np.ones((2, 3)), 3)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), m=st.integers(1, 8), P=st.integers(1, 8))
def test_greedy_matches_bruteforce(seed, m, P):
    M = np.random.default_rng(seed).uniform(size=(m, P))
    K = min(m, P)
    sel = greedy_select(M, K)
    rows, cols = brute_greedy(M, K)
    assert list(sel.matched_students) == rows
    assert list(sel.pi) == cols
    assert len(set(sel.pi)) == K
    assert sorted(sel.student_order) == list(range(m))
    assert sorted(sel.teacher_order) == list(range(P))
    # greedy property by replay: each pick dominates its residual submatrix
    for p in range(K):
        res = M[np.ix_(sel.student_order[p:], sel.teacher_order[p:])]
        assert M[sel.student_order[p], sel.pi[p]] >= res.max()


def test_random_6x5_bruteforce():
    M = np.random.default_rng(2024).uniform(size=(6, 5))
    sel = greedy_select(M, 5)
    assert (list(sel.matched_students), list(sel.pi)) == brute_greedy(M, 5)


def test_selection_round_trip():
    M = np.random.default_rng(1).uniform(size=(4, 3))
    sel = greedy_select(M, 2)
    back = SelectionMap.from_dict(sel.to_dict())
    assert back.pi == sel.pi and back.student_order == sel.student_order
    assert np.array_equal(back.score_matrix, sel.score_matrix)


def test_score_matrix_sign_free():
    vbar = np.array([[-0.5, 0.2], [0.3, -0.9]])
    S = score_matrix(np.array([0.8, 0.6]), vbar, 3)
    np.testing.assert_allclose(S, np.array([0.8, 0.6]) * vbar**4)


def test_gap_stats_diagonal_unbounded():
    sel = greedy_select(np.diag([0.9, 0.5, 0.2]), 3)
    g = gap_stats(sel, np.ones(3))
    assert g.delta_r == g.delta_c == g.delta_t == UNBOUNDED
    assert g.to_dict()["delta_r"] == "unbounded"


def test_gap_stats_example():
    sel = greedy_select(np.array([[0.5, 0.4], [0.45, 0.2]]), 2)
    g = gap_stats(sel, np.ones(2))
    assert g.delta_r == pytest.approx(0.25)
    assert g.delta_c == pytest.approx(0.5 / 0.45 - 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), m=st.integers(2, 7), P=st.integers(2, 7))
def test_gap_stats_match_double_loop(seed, m, P):
    M = np.random.default_rng(seed).uniform(size=(m, P))
    K = min(m, P) - 1 if min(m, P) > 1 else 1
    sel = greedy_select(M, K)
    g = gap_stats(sel, np.ones(P))
    dr, dc, dt = slack_oracle(M, list(sel.matched_students), list(sel.pi), K)
    assert g.delta_r == pytest.approx(dr)
    assert g.delta_c == pytest.approx(dc)
    assert g.delta_t == pytest.approx(dt)
    assert min(g.delta_r, g.delta_c, g.delta_t) >= 0


def test_gap_stats_regularity():
    teacher = power_law_teacher(4, 50, 0.8)
    student = init_student(50, 6, 1.0, 3)
    act = hermite_activation(4)
    sel = select_from_state(teacher, student, act)
    g = gap_stats(sel, teacher.a, student=student)
    vb2 = (student.V[:, :4] / np.linalg.norm(student.V, axis=1)[:, None]) ** 2
    diag = [vb2[k, q] for k, q in zip(sel.matched_students, sel.pi)]
    assert g.min_diag_overlap_sq == pytest.approx(min(diag))
    inf_norm = ((np.abs(student.V).max(axis=1) / np.linalg.norm(student.V, axis=1)) ** 2).max()
    assert g.max_inf_norm_sq == pytest.approx(inf_norm)
    unmatched = [k for k in range(6) if k not in sel.matched_students]
    assert g.min_max_unmatched_sq == pytest.approx(vb2[unmatched].max(axis=0).min())
    assert isinstance(g, GapStats)


def test_cauchy_collision_matches_small_delta_limit():
    # equal weights: exact probability ~ delta / pi, well under the 2 delta / pi bound
    p = cauchy_collision_probability(0.01, 1.0, 2)
    assert p == pytest.approx(0.01 / math.pi, rel=1e-3)
    assert p <= 2 * 0.01 / math.pi


def test_init_gap_distribution_small():
    dist = init_gap_distribution(200, 1, 2, np.array([1, 1]) / math.sqrt(2), 20_000, 4)
    assert dist.n_pairs == 20_000
    # linear growth in delta near 1
    i1, i2 = list(dist.deltas).index(0.01), list(dist.deltas).index(0.02)
    assert dist.empirical_freq[i2] == pytest.approx(2 * dist.empirical_freq[i1], abs=5 * dist.stderr[i2])
    for f, se, ex in zip(dist.empirical_freq, dist.stderr, dist.cauchy_exact):
        assert abs(f - ex) <= 4 * se + 1e-3
    text = dist.csv_text()
    assert text.splitlines()[0] == "delta,empirical_freq,cauchy_bound"
    assert len(text.splitlines()) == 1 + len(dist.deltas)


def test_init_gap_distribution_preconditions():
    with pytest.raises(ValueError):
        init_gap_distribution(10, 1, 2, np.array([0.8, 0.6]), 50, 0)
    with pytest.raises(ValueError):
        init_gap_distribution(10, 1, 1, np.array([1.0]), 200, 0)


def test_kth_largest_spot_check():
    assert kth_largest_frequency(4000, 8, 1000, 0) >= 0.95


def test_select_from_state_uses_scores():
    t = TeacherModel([0.8, 0.6], 3)
    s = StudentState([[0.1, 0.9, 0.0], [0.9, 0.1, 0.3]])
    sel = select_from_state(t, s, hermite_activation(4))
    assert sel.pi == (0, 1)
    assert sel.matched_students == (1, 0)
