"""Teacher/student networks, closed-form population loss and its gradient.

Teacher directions are the standard basis vectors ``e_1, ..., e_P`` so the
overlap of a student neuron with teacher ``p`` is just its ``p``-th coordinate
divided by its norm. Student neuron ``k`` contributes ``|v_k|^2 sigma(vbar_k . x)``.

The ``_``-prefixed array kernels accept stacked students ``V`` of shape
``(..., m, d)`` so that independent replicas can be advanced together.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hermite import (
    Activation,
    activation_eval,
    activation_eval_with_deriv,
    correlation_kernel,
    correlation_kernel_deriv,
)

SNAPSHOT_MAGIC = b"HFLOWSNP"
SNAPSHOT_VERSION = 1


class DegenerateNeuronError(ValueError):
    """A student neuron has zero norm, where the parameterization is singular."""


@dataclass(frozen=True)
class TeacherModel:
    """Additive teacher ``f_*(x) = sum_p a_p sigma(x_p)`` living in ``R^d``."""

    a: np.ndarray
    d: int

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if a.size == 0:
            raise ValueError("teacher needs at least one direction")
        if np.any(a < 0):
            raise ValueError("teacher coefficients must be nonnegative")
        if np.any(np.diff(a) > 0):
            raise ValueError("teacher coefficients must be sorted in descending order")
        if abs(float(a @ a) - 1.0) > 1e-10:
            raise ValueError(f"sum of squared coefficients is {float(a @ a)!r}, expected 1")
        if a.size > self.d:
            raise ValueError(f"P={a.size} orthonormal directions do not fit in d={self.d}")

    @property
    def P(self) -> int:
        return self.a.size


def power_law_coefficients(P: int, beta: float) -> np.ndarray:
    """``a_p proportional to p^-beta``, rescaled so that ``sum a_p^2 = 1``."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    a = np.arange(1, P + 1, dtype=float) ** (-beta)
    return a / np.linalg.norm(a)


def power_law_teacher(P: int, d: int, beta: float) -> TeacherModel:
    return TeacherModel(power_law_coefficients(P, beta), d)


@dataclass(frozen=True)
class StudentState:
    """Student neurons as the rows of ``V`` (shape ``(m, d)``) at step ``step``."""

    V: np.ndarray
    step: int = 0

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2:
            raise ValueError(f"V must be a 2-d array, got shape {V.shape}")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def norms_sq(self) -> np.ndarray:
        return np.einsum("kd,kd->k", self.V, self.V)


@dataclass(frozen=True)
class OverlapView:
    vbar: np.ndarray  # (m, P) normalized overlaps with the teacher directions
    norms_sq: np.ndarray  # (m,)
    gram: np.ndarray  # (m, m) cosines between student neurons


def _check_dims(teacher: TeacherModel, student: StudentState) -> None:
    if student.d != teacher.d:
        raise ValueError(f"student dimension {student.d} != teacher dimension {teacher.d}")


def _norms(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms_sq = np.einsum("...kd,...kd->...k", V, V)
    if np.any(norms_sq <= 0.0):
        bad = np.argwhere(norms_sq <= 0.0)[0]
        raise DegenerateNeuronError(f"degenerate neuron (zero norm) at index {tuple(bad)}")
    return norms_sq, np.sqrt(norms_sq)


def overlap_view(teacher: TeacherModel, student: StudentState) -> OverlapView:
    _check_dims(teacher, student)
    norms_sq, norms = _norms(student.V)
    Vbar = student.V / norms[:, None]
    gram = Vbar @ Vbar.T
    gram = 0.5 * (gram + gram.T)
    np.fill_diagonal(gram, 1.0)
    return OverlapView(Vbar[:, : teacher.P].copy(), norms_sq, gram)


# ---------------------------------------------------------------------------
# closed-form population quantities
# ---------------------------------------------------------------------------


def _population_loss(a: np.ndarray, V: np.ndarray, act: Activation) -> np.ndarray:
    P = a.shape[-1]
    r, norms = _norms(V)
    Vbar = V / norms[..., None]
    vbar = Vbar[..., :P]
    G = Vbar @ np.swapaxes(Vbar, -1, -2)
    self_term = 0.5 * float(a @ a) * correlation_kernel(act, 1.0)
    cross = np.einsum("...k,...kp,p->...", r, correlation_kernel(act, vbar), a)
    inter = 0.5 * np.einsum("...k,...kl,...l->...", r, correlation_kernel(act, G), r)
    return self_term - cross + inter


def _radial_tangent(a: np.ndarray, V: np.ndarray, act: Activation):
    """Radial scalars ``<grad_k L, v_k>`` and tangent vectors ``(I - vbar vbar^T) grad_k L``."""
    P = a.shape[-1]
    r, norms = _norms(V)
    Vbar = V / norms[..., None]
    vbar = Vbar[..., :P]
    G = Vbar @ np.swapaxes(Vbar, -1, -2)

    radial = -2.0 * r * (correlation_kernel(act, vbar) @ a)
    radial += 2.0 * r * np.einsum("...kl,...l->...k", correlation_kernel(act, G), r)

    # teacher pull: sum_p a_p K'(vbar_kp) (e_p - vbar_kp vbar_k)
    A = correlation_kernel_deriv(act, vbar) * a
    pull = np.zeros_like(V)
    pull[..., :P] = A
    pull -= np.sum(A * vbar, axis=-1)[..., None] * Vbar
    # student repulsion: sum_{l != k} r_l K'(G_kl) (vbar_l - G_kl vbar_k)
    B = correlation_kernel_deriv(act, G) * r[..., None, :]
    m = V.shape[-2]
    B[..., np.arange(m), np.arange(m)] = 0.0
    push = B @ Vbar - np.sum(B * G, axis=-1)[..., None] * Vbar
    tangent = norms[..., None] * (push - pull)
    return radial, tangent


def _population_grad(a: np.ndarray, V: np.ndarray, act: Activation) -> np.ndarray:
    radial, tangent = _radial_tangent(a, V, act)
    norms = np.sqrt(np.einsum("...kd,...kd->...k", V, V))
    return (radial / norms)[..., None] * (V / norms[..., None]) + tangent


def population_loss(teacher: TeacherModel, student: StudentState, act: Activation) -> float:
    _check_dims(teacher, student)
    return float(_population_loss(teacher.a, student.V, act))


def radial_component(teacher: TeacherModel, student: StudentState, act: Activation) -> np.ndarray:
    """``<grad_{v_k} L, v_k>`` for every neuron, shape ``(m,)``."""
    _check_dims(teacher, student)
    return _radial_tangent(teacher.a, student.V, act)[0]


def tangent_component(teacher: TeacherModel, student: StudentState, act: Activation) -> np.ndarray:
    """``(I - vbar_k vbar_k^T) grad_{v_k} L`` for every neuron, shape ``(m, d)``."""
    _check_dims(teacher, student)
    return _radial_tangent(teacher.a, student.V, act)[1]


def population_grad(teacher: TeacherModel, student: StudentState, act: Activation) -> np.ndarray:
    """Euclidean gradient of the population loss with respect to each row of ``V``."""
    _check_dims(teacher, student)
    return _population_grad(teacher.a, student.V, act)


# ---------------------------------------------------------------------------
# per-sample quantities
# ---------------------------------------------------------------------------


def _outputs(a: np.ndarray, V: np.ndarray, X: np.ndarray, act: Activation):
    """Teacher and student outputs for inputs ``X`` of shape ``(n, d)`` and one student."""
    P = a.shape[-1]
    r, norms = _norms(V)
    Z = X @ (V / norms[:, None]).T
    return activation_eval(act, X[:, :P]) @ a, activation_eval(act, Z) @ r


def model_output(x: np.ndarray, student: StudentState, act: Activation):
    """Student output; ``x`` may be one input ``(d,)`` or a batch ``(n, d)``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    r, norms = _norms(student.V)
    out = activation_eval(act, X @ (student.V / norms[:, None]).T) @ r
    return float(out[0]) if np.ndim(x) == 1 else out


def teacher_output(x: np.ndarray, teacher: TeacherModel, act: Activation):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = activation_eval(act, X[:, : teacher.P]) @ teacher.a
    return float(out[0]) if np.ndim(x) == 1 else out


def sample_loss(x: np.ndarray, teacher: TeacherModel, student: StudentState, act: Activation):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    f_star, f = _outputs(teacher.a, student.V, X, act)
    out = 0.5 * (f_star - f) ** 2
    return float(out[0]) if np.ndim(x) == 1 else out


def _sample_grad(a: np.ndarray, V: np.ndarray, x: np.ndarray, act: Activation) -> np.ndarray:
    """Per-sample gradient for stacked students ``V (..., m, d)`` and inputs ``x (..., d)``.

    ``grad_v f = 2 sigma(z) v + |v| sigma'(z) (x - z vbar)`` is regrouped as
    ``(2 sigma - z sigma') v + |v| sigma' x`` so only two full-size arrays are formed.
    """
    P = a.shape[-1]
    r, norms = _norms(V)
    z = np.einsum("...kd,...d->...k", V, x) / norms
    s, ds = activation_eval_with_deriv(act, z)
    resid = activation_eval(act, x[..., :P]) @ a - np.sum(r * s, axis=-1)
    cv = -resid[..., None] * (2.0 * s - z * ds)
    cx = -resid[..., None] * norms * ds
    return cv[..., None] * V + cx[..., None] * x[..., None, :]


def sample_grad(x: np.ndarray, teacher: TeacherModel, student: StudentState, act: Activation) -> np.ndarray:
    """Gradient of ``0.5 (f_*(x) - f(x))^2`` with respect to each row of ``V``."""
    _check_dims(teacher, student)
    return _sample_grad(teacher.a, student.V, np.asarray(x, dtype=float), act)


def _sample_grads_many(a: np.ndarray, V: np.ndarray, X: np.ndarray, act: Activation) -> np.ndarray:
    """Per-sample gradients for one student and inputs ``X (n, d)``; shape ``(n, m, d)``."""
    P = a.shape[-1]
    r, norms = _norms(V)
    Vbar = V / norms[:, None]
    Z = X @ Vbar.T
    s, ds = activation_eval_with_deriv(act, Z)
    resid = activation_eval(act, X[:, :P]) @ a - s @ r
    tang = X[:, None, :] - Z[:, :, None] * Vbar[None]
    grad_f = 2.0 * s[:, :, None] * V[None] + (norms * ds)[:, :, None] * tang
    return -resid[:, None, None] * grad_f


# ---------------------------------------------------------------------------
# Monte Carlo oracles
# ---------------------------------------------------------------------------

MC_CHUNK = 1 << 16


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _chunk_sizes(n: int):
    start = 0
    idx = 0
    while start < n:
        size = min(MC_CHUNK, n - start)
        yield idx, size
        start += size
        idx += 1


def mc_population_loss(
    teacher: TeacherModel, student: StudentState, act: Activation, n: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo mean of the per-sample loss and its standard error.

    Samples are drawn in fixed-size chunks whose generators derive from
    ``(seed, chunk index)``, so results do not depend on how chunks are scheduled.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    _check_dims(teacher, student)
    count, mean, m2 = 0, 0.0, 0.0
    for idx, size in _chunk_sizes(n):
        X = _chunk_rng(seed, idx).standard_normal((size, teacher.d))
        f_star, f = _outputs(teacher.a, student.V, X, act)
        losses = 0.5 * (f_star - f) ** 2
        c_mean = float(losses.mean())
        c_m2 = float(((losses - c_mean) ** 2).sum())
        delta = c_mean - mean
        total = count + size
        mean += delta * size / total
        m2 += c_m2 + delta * delta * count * size / total
        count = total
    var = m2 / (count - 1)
    return mean, math.sqrt(var / count)


def mc_sample_grad(
    teacher: TeacherModel, student: StudentState, act: Activation, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise Monte Carlo mean of ``sample_grad`` and its standard error."""
    if n < 2:
        raise ValueError("need at least two samples")
    _check_dims(teacher, student)
    shape = student.V.shape
    count, mean, m2 = 0, np.zeros(shape), np.zeros(shape)
    for idx, size in _chunk_sizes(n):
        X = _chunk_rng(seed, idx).standard_normal((size, teacher.d))
        for lo in range(0, size, 8192):
            g = _sample_grads_many(teacher.a, student.V, X[lo : lo + 8192], act)
            b = g.shape[0]
            c_mean = g.mean(axis=0)
            c_m2 = ((g - c_mean) ** 2).sum(axis=0)
            delta = c_mean - mean
            total = count + b
            mean = mean + delta * (b / total)
            m2 = m2 + c_m2 + delta * delta * (count * b / total)
            count = total
    return mean, np.sqrt(m2 / (count - 1) / count)


# ---------------------------------------------------------------------------
# binary snapshots
# ---------------------------------------------------------------------------


def save_snapshot(path, teacher: TeacherModel, student: StudentState) -> None:
    """Write teacher and student to one binary file.

    Layout: 8-byte magic ``HFLOWSNP``, little-endian uint32 header length,
    UTF-8 JSON header, then ``a`` (P doubles) and ``V`` (m*d doubles, row-major),
    all little-endian float64.
    """
    _check_dims(teacher, student)
    header = {
        "version": SNAPSHOT_VERSION,
        "d": teacher.d,
        "P": teacher.P,
        "m": student.m,
        "step": int(student.step),
        "dtype": "<f8",
        "order": "C",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(teacher.a, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(student.V, dtype="<f8").tobytes())


def load_snapshot(path) -> tuple[TeacherModel, StudentState]:
    data = Path(path).read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {header.get('version')}")
    d, P, m = header["d"], header["P"], header["m"]
    body = np.frombuffer(data, dtype="<f8", offset=12 + hlen)
    if body.size != P + m * d:
        raise ValueError(f"{path}: payload has {body.size} values, expected {P + m * d}")
    a = body[:P].astype(float)
    V = body[P:].reshape(m, d).astype(float)
    return TeacherModel(a, d), StudentState(V, header["step"])
