"""Online SGD and population gradient descent with trajectory logging.

Randomness: the initialization of a run uses the stream
``SeedSequence(seed, spawn_key=(0,))`` and the fresh input at step ``t`` is
row ``t % SAMPLE_BLOCK`` of a block drawn from
``SeedSequence(seed, spawn_key=(1, t // SAMPLE_BLOCK))``. The trajectory
therefore depends only on the seed, never on the logging schedule.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .hermite import Activation, hermite_activation
from .model import (
    StudentState,
    TeacherModel,
    _population_grad,
    _population_loss,
    _sample_grad,
    power_law_coefficients,
)
from .selection import SelectionMap, select_from_state

MODES = ("online_sgd", "population_gd")
SAMPLE_BLOCK = 256
DIVERGENCE_FACTOR = 10.0
DEFAULT_THRESHOLD = 0.5


class DivergenceError(RuntimeError):
    """A neuron left the bounded region ``|v|^2 <= 10 max a_p`` (or became non-finite)."""

    def __init__(self, message: str, t: int, logs: list):
        super().__init__(message)
        self.t = t
        self.logs = logs


@dataclass(frozen=True)
class RunConfig:
    d: int
    P: int
    m: int
    eta: float
    sigma0: float
    steps: int
    seed: int = 0
    mode: str = "population_gd"
    beta: float | None = None
    a: tuple[float, ...] | None = None
    P_star: int | None = None
    log_stride: float = 1.1
    log_dense: int = 1000
    activation: Activation = field(default_factory=lambda: hermite_activation(4))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.d, self.P, self.m) < 1:
            raise ValueError("d, P and m must be positive")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if (self.beta is None) == (self.a is None):
            raise ValueError("give exactly one of beta and a")
        if self.beta is not None and self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.a is not None:
            object.__setattr__(self, "a", tuple(float(x) for x in self.a))
            if len(self.a) != self.P:
                raise ValueError(f"a has {len(self.a)} entries, expected P={self.P}")
        if self.P_star is not None and not 1 <= self.P_star <= min(self.m, self.P):
            raise ValueError(f"P_star must lie in [1, min(m, P)], got {self.P_star}")
        if not self.log_stride > 1:
            raise ValueError("log_stride must be > 1")
        if self.log_dense < 0:
            raise ValueError("log_dense must be >= 0")

    def teacher(self) -> TeacherModel:
        a = self.a if self.a is not None else power_law_coefficients(self.P, self.beta)
        return TeacherModel(np.asarray(a), self.d)

    @property
    def effective_P_star(self) -> int:
        return self.P_star if self.P_star is not None else min(self.m, self.P)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "activation"}
        out["a"] = list(self.a) if self.a is not None else None
        out["activation"] = self.activation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "activation" in data:
            data["activation"] = Activation.from_dict(data["activation"])
        if data.get("a") is not None:
            data["a"] = tuple(data["a"])
        return cls(**data)


@dataclass(frozen=True)
class Record:
    t: int
    loss: float
    diag_overlaps: tuple[float, ...]  # vbar^2 of matched pairs, in selection order
    norms_sq: tuple[float, ...]  # |v|^2 of matched neurons, in selection order
    max_irrelevant: float  # largest vbar^2 outside the matched pairs
    max_unused_norm: float  # largest |v|^2 among unmatched neurons


@dataclass(frozen=True)
class TrajectoryLog:
    records: tuple[Record, ...]
    selection: SelectionMap
    config: RunConfig | None = None
    status: str = "ok"
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=float)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def overlaps(self) -> np.ndarray:
        """Matched overlaps ``vbar^2_{p, pi(p)}``, shape ``(records, P_star)``."""
        return np.array([r.diag_overlaps for r in self.records]).reshape(len(self.records), -1)

    @property
    def matched_norms(self) -> np.ndarray:
        return np.array([r.norms_sq for r in self.records]).reshape(len(self.records), -1)

    @property
    def initial_overlaps(self) -> np.ndarray:
        return np.array(self.records[0].diag_overlaps)

    def at(self, t: float) -> Record:
        """Latest record with ``record.t <= t``."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.records[max(idx, 0)]

    def csv_text(self) -> str:
        K = self.selection.P_star
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["t", "loss"]
            + [f"vbar2_p{p + 1}" for p in range(K)]
            + [f"norm2_p{p + 1}" for p in range(K)]
            + ["max_irrelevant", "max_unused_norm"]
        )
        for r in self.records:
            writer.writerow(
                [str(r.t), repr(r.loss)]
                + [repr(x) for x in r.diag_overlaps]
                + [repr(x) for x in r.norms_sq]
                + [repr(r.max_irrelevant), repr(r.max_unused_norm)]
            )
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "config": self.config.to_dict() if self.config else None,
            "selection": self.selection.to_dict(),
            "status": self.status,
            "message": self.message,
        }

    def write(self, directory, stem: str = "trajectory") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def read_trajectory(csv_path, json_path=None) -> TrajectoryLog:
    """Load a log written by :meth:`TrajectoryLog.write`."""
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    side = json.loads(json_path.read_text())
    selection = SelectionMap.from_dict(side["selection"])
    K = selection.P_star
    rows = list(csv.reader(io.StringIO(csv_path.read_text())))[1:]
    records = []
    for row in rows:
        vals = [float(x) for x in row[1:]]
        records.append(
            Record(int(row[0]), vals[0], tuple(vals[1 : 1 + K]), tuple(vals[1 + K : 1 + 2 * K]), vals[-2], vals[-1])
        )
    config = RunConfig.from_dict(side["config"]) if side.get("config") else None
    return TrajectoryLog(tuple(records), selection, config, side.get("status", "ok"), side.get("message", ""))


def log_times(steps: int, dense: int = 1000, stride: float = 1.1) -> list[int]:
    """Every step up to ``dense``, then geometrically spaced, always ending at ``steps``."""
    out = list(range(0, min(dense, steps) + 1))
    t = out[-1]
    while t < steps:
        t = min(steps, max(t + 1, math.ceil(t * stride)))
        out.append(t)
    return out


def init_student(d: int, m: int, sigma0: float, seed: int) -> StudentState:
    """``m`` neurons drawn uniformly from the sphere of radius ``sigma0`` in ``R^d``."""
    if not sigma0 > 0:
        raise ValueError(f"sigma0 must be > 0, got {sigma0}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    G = rng.standard_normal((m, d))
    return StudentState(G * (sigma0 / np.linalg.norm(G, axis=1, keepdims=True)), 0)


def sample_block(seed: int, block: int, d: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, block)))
    return rng.standard_normal((SAMPLE_BLOCK, d))


def sample_at(seed: int, t: int, d: int) -> np.ndarray:
    """The fresh Gaussian input used at step ``t`` of a run with this seed."""
    return sample_block(seed, t // SAMPLE_BLOCK, d)[t % SAMPLE_BLOCK]


def sgd_step(student: StudentState, x: np.ndarray, eta: float, teacher: TeacherModel, act: Activation) -> StudentState:
    g = _sample_grad(teacher.a, student.V, np.asarray(x, dtype=float), act)
    return StudentState(student.V - eta * g, student.step + 1)


def gd_step(student: StudentState, eta: float, teacher: TeacherModel, act: Activation) -> StudentState:
    g = _population_grad(teacher.a, student.V, act)
    return StudentState(student.V - eta * g, student.step + 1)


class _Recorder:
    """Turns a replica's state into a :class:`Record` given its selection map."""

    def __init__(self, selection: SelectionMap, m: int, P: int):
        K = selection.P_star
        self.rows = np.array(selection.student_order[:K], dtype=int)
        self.cols = np.array(selection.pi, dtype=int)
        mask = np.ones((m, P), dtype=bool)
        mask[self.rows, self.cols] = False
        self.irrelevant = mask
        self.unused = np.array(selection.student_order[K:], dtype=int)

    def __call__(self, t: int, loss: float, V: np.ndarray) -> Record:
        P = self.irrelevant.shape[1]
        r = np.einsum("kd,kd->k", V, V)
        vbar2 = V[:, :P] ** 2 / r[:, None]
        irr = vbar2[self.irrelevant]
        return Record(
            int(t),
            float(loss),
            tuple(float(x) for x in vbar2[self.rows, self.cols]),
            tuple(float(x) for x in r[self.rows]),
            float(irr.max()) if irr.size else math.nan,
            float(r[self.unused].max()) if self.unused.size else math.nan,
        )


def run_replicas(
    config: RunConfig,
    seeds: Sequence[int],
    progress: Callable[[int, float], None] | None = None,
) -> list[TrajectoryLog]:
    """Run independent copies of ``config`` (one per seed) advanced in lockstep.

    Each replica follows exactly the random streams that ``run`` would use for
    its seed; stacking only amortizes per-step overhead.
    """
    teacher = config.teacher()
    a, act = teacher.a, config.activation
    d, m = config.d, config.m
    seeds = [int(s) for s in seeds]
    V = np.stack([init_student(d, m, config.sigma0, s).V for s in seeds])
    selections = [select_from_state(teacher, StudentState(v), act, config.effective_P_star) for v in V]
    recorders = [_Recorder(sel, m, teacher.P) for sel in selections]
    records: list[list[Record]] = [[] for _ in seeds]
    schedule = log_times(config.steps, config.log_dense, config.log_stride)
    next_log = 0
    limit = DIVERGENCE_FACTOR * float(a.max())
    online = config.mode == "online_sgd"
    X = None

    def partial_logs(message: str) -> list[TrajectoryLog]:
        return [
            TrajectoryLog(tuple(rec), sel, replace(config, seed=s), "diverged", message)
            for rec, sel, s in zip(records, selections, seeds)
        ]

    for t in range(config.steps + 1):
        if t == schedule[next_log]:
            losses = _population_loss(a, V, act)
            for i, rec in enumerate(recorders):
                records[i].append(rec(t, losses[i], V[i]))
            if progress is not None:
                progress(t, float(losses[0]))
            next_log += 1
        if t == config.steps:
            break
        if online:
            j = t % SAMPLE_BLOCK
            if j == 0:
                X = np.stack([sample_block(s, t // SAMPLE_BLOCK, d) for s in seeds])
            g = _sample_grad(a, V, X[:, j], act)
        else:
            g = _population_grad(a, V, act)
        V -= config.eta * g
        norms_sq = np.einsum("...kd,...kd->...k", V, V)
        worst = float(norms_sq.max())
        if not np.all(np.isfinite(norms_sq)) or worst > limit:
            msg = f"divergence at step {t + 1}: max |v|^2 = {worst:.4g} exceeds {limit:.4g} (10 max a_p)"
            raise DivergenceError(msg, t + 1, partial_logs(msg))

    return [
        TrajectoryLog(tuple(rec), sel, replace(config, seed=s))
        for rec, sel, s in zip(records, selections, seeds)
    ]


def run(config: RunConfig, progress: Callable[[int, float], None] | None = None) -> TrajectoryLog:
    """Execute ``config.steps`` iterations and log per the geometric schedule."""
    return run_replicas(config, [config.seed], progress)[0]


def detect_emergence(log: TrajectoryLog, threshold: float = DEFAULT_THRESHOLD) -> list[tuple[int, float]]:
    """First crossing of ``threshold`` by each matched overlap, interpolated in log-time.

    Returns ``(p, t_hat)`` pairs (0-based ``p`` in selection order) for the
    overlaps that cross; the others are omitted.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    t = log.times
    Y = log.overlaps
    out = []
    for p in range(Y.shape[1]):
        above = np.nonzero(Y[:, p] >= threshold)[0]
        if above.size == 0:
            continue
        i = int(above[0])
        if i == 0:
            out.append((p, float(t[0])))
            continue
        t0, t1, y0, y1 = t[i - 1], t[i], Y[i - 1, p], Y[i, p]
        frac = (threshold - y0) / (y1 - y0)
        if t0 > 0:
            t_hat = math.exp(math.log(t0) + frac * (math.log(t1) - math.log(t0)))
        else:
            t_hat = t0 + frac * (t1 - t0)
        out.append((p, float(t_hat)))
    return out


@dataclass(frozen=True)
class Violation:
    t: int
    kind: str  # "irrelevant_overlap" or "unused_norm"
    value: float
    bound: float


@dataclass(frozen=True)
class DiagnosticsReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [v.__dict__ for v in self.violations]}


def diagnostics_check(log: TrajectoryLog, eps0: float, sigma1_sq: float) -> DiagnosticsReport:
    """Flag records where an irrelevant overlap exceeds ``eps0`` or an unused neuron's ``|v|^2`` exceeds ``sigma1_sq``."""
    if not (eps0 > 0 and sigma1_sq > 0):
        raise ValueError("eps0 and sigma1_sq must be positive")
    found = []
    for r in log.records:
        if r.max_irrelevant > eps0:
            found.append(Violation(r.t, "irrelevant_overlap", r.max_irrelevant, eps0))
        if r.max_unused_norm > sigma1_sq:
            found.append(Violation(r.t, "unused_norm", r.max_unused_norm, sigma1_sq))
    return DiagnosticsReport(tuple(found))
