"""Deterministic SVG plots and the numeric CSV that always accompanies them."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

from .theory import Prediction, to_idealized_units  # noqa: E402

SVG_RC = {"svg.hashsalt": "hermite-flow", "svg.fonttype": "none"}
RUNS_HEADER = "key,seed,status,records,final_loss"


def staircase_points(prediction: Prediction) -> tuple[np.ndarray, np.ndarray]:
    """Step positions and the idealized loss level just after each step.

    The x-positions are the finite thresholds in increasing order.
    """
    T = np.array([x for x in prediction.thresholds if math.isfinite(x)])
    T.sort()
    levels = np.array([prediction.staircase(t) for t in T])
    return T, levels


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasSVG(fig)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def plot_loss(log, prediction: Prediction | None, path) -> Path:
    """Log-log loss curve (``sum a^2`` units) with the idealized staircase overlay."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    t = log.times
    L = to_idealized_units(log.losses)
    keep = (t > 0) & (L > 0)
    ax.loglog(t[keep], L[keep], color="C0", label="simulation")
    if prediction is not None and keep.any():
        lo, hi = t[keep].min(), t[keep].max()
        T, _ = staircase_points(prediction)
        xs = np.union1d(np.geomspace(lo, hi, 200), T[(T > lo) & (T < hi)])
        ys = prediction.staircase(xs)
        pos = ys > 0
        ax.step(xs[pos], ys[pos], where="post", color="C3", linestyle="--", label="idealized staircase")
    ax.set_xlabel("step t")
    ax.set_ylabel("loss (sum a^2 units)")
    ax.legend(loc="lower left")
    return _save(fig, Path(path))


def plot_overlaps(log, path) -> Path:
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    t = log.times
    Y = log.overlaps
    keep = t > 0
    for p in range(Y.shape[1]):
        ax.semilogx(t[keep], Y[keep, p], linewidth=1)
    ax.set_xlabel("step t")
    ax.set_ylabel("matched overlap vbar^2")
    ax.set_ylim(0, 1.05)
    return _save(fig, Path(path))


def emit_plots(report, directory) -> list[Path]:
    """Write ``runs.csv`` and, per run, a loss and an overlap SVG."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [RUNS_HEADER]
    paths = []
    for r in report.runs:
        seed = r.log.config.seed if r.log.config else ""
        final = repr(float(r.log.losses[-1])) if r.log.records else ""
        lines.append(f"{r.key},{seed},{r.log.status},{len(r.log.records)},{final}")
        if not r.log.records:
            continue
        stem = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in r.key)
        paths.append(plot_loss(r.log, r.prediction, directory / f"loss_{stem}.svg"))
        paths.append(plot_overlaps(r.log, directory / f"overlaps_{stem}.svg"))
    csv_path = directory / "runs.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    return [csv_path] + paths
