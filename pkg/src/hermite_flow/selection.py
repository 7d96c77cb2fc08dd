"""Greedy maximum selection of student/teacher pairs and initialization gap statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hermite import Activation
from .model import StudentState, TeacherModel, overlap_view

UNBOUNDED = math.inf


@dataclass(frozen=True)
class SelectionMap:
    """Result of greedy maximum selection.

    ``pi[p]`` is the teacher direction matched to student ``student_order[p]``
    for ``p < P_star``; ``teacher_order`` extends ``pi`` with the unmatched
    teacher indices in increasing order. Indices are 0-based.
    """

    pi: tuple[int, ...]
    student_order: tuple[int, ...]
    teacher_order: tuple[int, ...]
    P_star: int
    score_matrix: np.ndarray
    info_exponent_half: int = 2

    @property
    def matched_students(self) -> tuple[int, ...]:
        return self.student_order[: self.P_star]

    @property
    def unused_students(self) -> tuple[int, ...]:
        return self.student_order[self.P_star :]

    def reordered_scores(self) -> np.ndarray:
        """Scores with rows in ``student_order`` and columns in ``teacher_order``."""
        return self.score_matrix[np.ix_(self.student_order, self.teacher_order)]

    def to_dict(self) -> dict:
        return {
            "pi": list(self.pi),
            "student_order": list(self.student_order),
            "teacher_order": list(self.teacher_order),
            "P_star": self.P_star,
            "info_exponent_half": self.info_exponent_half,
            "score_matrix": self.score_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionMap":
        return cls(
            tuple(data["pi"]),
            tuple(data["student_order"]),
            tuple(data["teacher_order"]),
            int(data["P_star"]),
            np.asarray(data["score_matrix"], dtype=float),
            int(data.get("info_exponent_half", 2)),
        )


def score_matrix(a: np.ndarray, vbar: np.ndarray, info_exponent_half: int) -> np.ndarray:
    """``a_q * vbar_{k,q}^(2I-2)``, written as ``(vbar^2)^(I-1)`` so it is sign-free."""
    return np.asarray(a)[None, :] * (np.asarray(vbar) ** 2) ** (info_exponent_half - 1)


def greedy_select(scores: np.ndarray, P_star: int, info_exponent_half: int = 2) -> SelectionMap:
    """Repeatedly take the largest remaining entry and drop its row and column.

    Ties go to the smallest row index, then the smallest column index.
    """
    scores = np.asarray(scores, dtype=float)
    m, P = scores.shape
    if not 0 <= P_star <= min(m, P):
        raise ValueError(f"P_star={P_star} must lie in [0, min(m, P)={min(m, P)}]")
    work = scores.copy()
    rows, cols = [], []
    for _ in range(P_star):
        k, q = np.unravel_index(int(np.argmax(work)), work.shape)
        rows.append(int(k))
        cols.append(int(q))
        work[k, :] = -np.inf
        work[:, q] = -np.inf
    used_rows, used_cols = set(rows), set(cols)
    student_order = rows + [k for k in range(m) if k not in used_rows]
    teacher_order = cols + [q for q in range(P) if q not in used_cols]
    return SelectionMap(
        tuple(cols), tuple(student_order), tuple(teacher_order), P_star, scores, info_exponent_half
    )


def select_from_state(
    teacher: TeacherModel, student: StudentState, act: Activation, P_star: int | None = None
) -> SelectionMap:
    if P_star is None:
        P_star = min(student.m, teacher.P)
    ov = overlap_view(teacher, student)
    I = act.info_exponent_half
    return greedy_select(score_matrix(teacher.a, ov.vbar, I), P_star, I)


@dataclass(frozen=True)
class GapStats:
    delta_r: float
    delta_c: float
    delta_t: float
    max_inf_norm_sq: float
    min_diag_overlap_sq: float
    min_max_unmatched_sq: float

    @property
    def all_positive(self) -> bool:
        return self.delta_r > 0 and self.delta_c > 0 and self.delta_t > 0

    def to_dict(self) -> dict:
        def enc(x):
            return "unbounded" if x == UNBOUNDED else x

        return {
            "delta_r": enc(self.delta_r),
            "delta_c": enc(self.delta_c),
            "delta_t": enc(self.delta_t),
            "regularity": {
                "max_inf_norm_sq": self.max_inf_norm_sq,
                "min_diag_overlap_sq": self.min_diag_overlap_sq,
                "min_max_unmatched_sq": self.min_max_unmatched_sq,
            },
        }


def _slack(top: float, others: np.ndarray) -> float:
    """Largest delta with ``top >= (1 + delta) * x`` for every ``x`` in ``others``."""
    if others.size == 0:
        return UNBOUNDED
    largest = float(others.max())
    if largest <= 0:
        return UNBOUNDED if top > 0 else 0.0
    return max(top / largest - 1.0, 0.0)


def gap_stats(
    selection: SelectionMap,
    a: np.ndarray,
    P_star: int | None = None,
    student: StudentState | None = None,
) -> GapStats:
    """Row, column and threshold gaps of the greedy matrix plus regularity scalars.

    Regularity scalars are recovered from the scores (``vbar^2 = (score/a)^(1/(I-1))``);
    the sup-norm of each neuron needs all coordinates and is NaN unless
    ``student`` is given.
    """
    if P_star is None:
        P_star = selection.P_star
    if P_star > selection.P_star:
        raise ValueError(f"P_star={P_star} exceeds the selection's P_star={selection.P_star}")
    S = selection.reordered_scores()
    m, P = S.shape

    delta_r = UNBOUNDED
    delta_c = UNBOUNDED
    for p in range(P_star):
        delta_r = min(delta_r, _slack(S[p, p], S[p, p + 1 :]))
        delta_c = min(delta_c, _slack(S[p, p], S[p + 1 :, p]))
    delta_t = UNBOUNDED
    if P_star > 0:
        delta_t = _slack(S[P_star - 1, P_star - 1], S[P_star:, P_star:].ravel())

    a_ord = np.asarray(a, dtype=float)[list(selection.teacher_order)]
    I = selection.info_exponent_half
    with np.errstate(divide="ignore", invalid="ignore"):
        vbar_sq = np.where(a_ord > 0, S / a_ord, np.nan) ** (1.0 / (I - 1))
    diag = np.array([vbar_sq[p, p] for p in range(P_star)])
    min_diag = float(diag.min()) if diag.size else math.nan
    if m > P_star:
        min_max_unmatched = float(np.nanmin(vbar_sq[P_star:, :].max(axis=0)))
    else:
        min_max_unmatched = math.nan
    if student is not None:
        norms = np.linalg.norm(student.V, axis=1)
        max_inf = float(((np.abs(student.V).max(axis=1) / norms) ** 2).max())
    else:
        max_inf = math.nan
    return GapStats(delta_r, delta_c, delta_t, max_inf, min_diag, min_max_unmatched)


def sample_sphere(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, d))
    return G * (radius / np.linalg.norm(G, axis=1, keepdims=True))


@dataclass(frozen=True)
class GapDistribution:
    deltas: np.ndarray
    empirical_freq: np.ndarray
    stderr: np.ndarray
    cauchy_bound: np.ndarray
    cauchy_exact: np.ndarray
    n_pairs: int

    def csv_text(self) -> str:
        lines = ["delta,empirical_freq,cauchy_bound"]
        for row in zip(self.deltas, self.empirical_freq, self.cauchy_bound):
            lines.append(",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def cauchy_collision_probability(delta: float, ratio: float, info_exponent_half: int) -> float:
    """``P[a_i vbar_i^(2I-2) in (1 +- delta) a_j vbar_j^(2I-2)]`` for ``ratio = a_j / a_i``.

    ``vbar_i / vbar_j`` is standard Cauchy, and the event is symmetric in its sign.
    """
    e = 1.0 / (2 * info_exponent_half - 2)
    hi = ((1 + delta) * ratio) ** e
    lo = ((1 - delta) * ratio) ** e
    return 2.0 / math.pi * (math.atan(hi) - math.atan(lo))


def init_gap_distribution(
    d: int,
    m: int,
    P: int,
    a: np.ndarray,
    trials: int,
    seed: int,
    deltas=(0.005, 0.01, 0.02, 0.05, 0.1),
    info_exponent_half: int = 2,
    chunk: int = 2000,
) -> GapDistribution:
    """Frequency of near-ties ``a_i vbar_i^(2I-2) in (1 +- delta) a_j vbar_j^(2I-2)``.

    Each trial draws ``m`` neurons uniformly on the sphere in ``R^d``; every
    neuron contributes one observation per unordered teacher pair ``i < j``.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    a = np.asarray(a, dtype=float)[:P]
    deltas = np.asarray(deltas, dtype=float)
    ii, jj = np.triu_indices(P, k=1)
    if ii.size == 0:
        raise ValueError("need at least two teacher directions")
    e = info_exponent_half - 1
    hits = np.zeros(deltas.size)
    n_pairs = 0
    for c, start in enumerate(range(0, trials, chunk)):
        n = min(chunk, trials - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(c,)))
        vbar = sample_sphere(rng, n * m, d)[:, :P]
        w = a * (vbar * vbar) ** e
        ratio = w[:, ii] / w[:, jj]
        hits += (np.abs(ratio[..., None] - 1.0) < deltas).reshape(-1, deltas.size).sum(axis=0)
        n_pairs += ratio.size
    freq = hits / n_pairs
    stderr = np.sqrt(freq * (1 - freq) / n_pairs)
    exact = np.array(
        [
            np.mean([cauchy_collision_probability(dl, a[j] / a[i], info_exponent_half) for i, j in zip(ii, jj)])
            for dl in deltas
        ]
    )
    return GapDistribution(deltas, freq, stderr, 2.0 * deltas / math.pi, exact, n_pairs)


def kth_largest_frequency(m: int, K: int, trials: int, seed: int) -> float:
    """Fraction of trials where the K-th largest ``|Z|^2`` of ``m`` normals exceeds ``log(m/K)``."""
    rng = np.random.default_rng(seed)
    Z2 = rng.standard_normal((trials, m)) ** 2
    kth = -np.partition(-Z2, K - 1, axis=1)[:, K - 1]
    return float(np.mean(kth > math.log(m / K)))
