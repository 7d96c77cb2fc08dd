"""Closed-form predictions: emergence times, idealized overlap ODE, staircase loss, exponents.

Loss convention: predictions are expressed as ``sum a_p^2`` over unlearned
directions, i.e. without the 1/2 of the MSE. :func:`to_idealized_units`
converts a simulated population loss to this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .hermite import Activation


class PostTransitionError(ValueError):
    """The idealized overlap has already blown up at the requested time."""


def _rate(act: Activation) -> float:
    I = act.info_exponent_half
    return 4.0 * I * (I - 1) * act.leading_coeff**2


def predicted_time(a_p: float, vbar2_init: float, eta: float, act: Activation) -> float:
    """Emergence step ``1 / (4I(I-1) c_{2I}^2 a_p eta vbar2^(I-1))``."""
    if a_p <= 0 or vbar2_init <= 0 or eta <= 0:
        raise ValueError("a_p, vbar2_init and eta must all be positive")
    return 1.0 / (_rate(act) * a_p * eta * vbar2_init ** (act.info_exponent_half - 1))


def ode_overlap(t, vbar2_init: float, a: float, eta: float, act: Activation):
    """Solution of ``dx/dt = 4I c_{2I}^2 a eta x^I`` started at ``vbar2_init``.

    Valid strictly before the blow-up time, which equals :func:`predicted_time`.
    """
    e = act.info_exponent_half - 1
    t = np.asarray(t, dtype=float)
    t_blow = vbar2_init ** (-e) / (_rate(act) * a * eta)
    if np.any(t >= t_blow):
        raise PostTransitionError("post-transition: t is at or beyond the blow-up time")
    out = (vbar2_init ** (-e) * (1.0 - t / t_blow)) ** (-1.0 / e)
    return out if out.ndim else float(out)


def idealized_loss(t, thresholds, a) -> np.ndarray | float:
    """Staircase ``sum_p a_p^2 1{t < T_p}``; use ``inf`` for directions never learned."""
    thresholds = np.asarray(thresholds, dtype=float)
    a = np.asarray(a, dtype=float)
    if thresholds.shape != a.shape:
        raise ValueError("thresholds and a must have the same length")
    t = np.asarray(t, dtype=float)
    order = np.argsort(thresholds, kind="stable")
    T_sorted = thresholds[order]
    # suffix[i] = sum of a^2 over sorted thresholds i, i+1, ...; t < T is side='right'
    suffix = np.concatenate([np.cumsum((a[order] ** 2)[::-1])[::-1], [0.0]])
    out = suffix[np.searchsorted(T_sorted, t, side="right")]
    return out if out.ndim else float(out)


def to_idealized_units(loss):
    """Population MSE (with its 1/2) to the ``sum a^2`` staircase convention."""
    return 2.0 * np.asarray(loss, dtype=float)


@dataclass(frozen=True)
class ScalingExponents:
    time_exp: float
    width_exp: float
    compute_opt_loss_exp: float
    compute_opt_width_exp: float
    unstable_exp: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def scaling_exponents(beta: float) -> ScalingExponents:
    if beta <= 0.5:
        raise ValueError(f"heavy-tailed regime: power-law exponents need beta > 1/2, got {beta}")
    return ScalingExponents(
        time_exp=(1 - 2 * beta) / beta,
        width_exp=1 - 2 * beta,
        compute_opt_loss_exp=(1 - 2 * beta) / (1 + beta),
        compute_opt_width_exp=1 / (1 + beta),
        unstable_exp=(1 - 2 * beta) / (2 * beta),
    )


def fit_slope(series, window=(0.5, 0.02)) -> tuple[float, float]:
    """OLS slope of ``log L`` against ``log t`` over points with ``L`` strictly inside the window.

    ``window`` is ``(L_hi, L_lo)``. Returns ``(slope, stderr)``.
    """
    hi, lo = max(window), min(window)
    pts = np.asarray(series, dtype=float).reshape(-1, 2)
    t, L = pts[:, 0], pts[:, 1]
    keep = (L > lo) & (L < hi) & (t > 0)
    if keep.sum() < 5:
        raise ValueError(f"need at least 5 points with L in ({lo}, {hi}), got {int(keep.sum())}")
    x, y = np.log(t[keep]), np.log(L[keep])
    if np.ptp(y) == 0.0:
        return 0.0, 0.0
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def suggested_learning_rate(a_min: float, d: int, act: Activation, scale: float = 1.0) -> float:
    """``scale * a_min * d^-I``: the small-step regime, with the log and gap factors folded into ``scale``."""
    return scale * a_min * float(d) ** (-act.info_exponent_half)


def typical_overlap_sq(d: int, m: int) -> float:
    """Leading-order largest squared overlap among ``m`` random neurons, ``2 log(m) / d``."""
    return 2.0 * math.log(max(m, 2)) / d


@dataclass(frozen=True)
class Prediction:
    """Emergence times for matched pairs plus the staircase they imply.

    ``T_p`` follows the selection order; ``thresholds`` and ``levels`` are the
    staircase over all teacher directions (``inf`` for never-learned ones).
    """

    variant: str
    T_p: tuple[float, ...]
    thresholds: tuple[float, ...]
    levels: tuple[float, ...]
    exponents: ScalingExponents | None = None
    extras: dict = field(default_factory=dict)

    def staircase(self, t):
        return idealized_loss(t, self.thresholds, np.sqrt(self.levels))

    def to_dict(self) -> dict:
        def enc(x):
            return None if math.isinf(x) else x

        return {
            "variant": self.variant,
            "T_p": list(self.T_p),
            "thresholds": [enc(x) for x in self.thresholds],
            "levels": list(self.levels),
            "exponents": self.exponents.to_dict() if self.exponents else None,
            **self.extras,
        }


def predict(
    a: np.ndarray,
    pi,
    vbar2_init,
    eta: float,
    act: Activation,
    beta: float | None = None,
    variant: str = "realized",
    d: int | None = None,
    m: int | None = None,
) -> Prediction:
    """Emergence times for the matched pairs ``(p, pi[p])``.

    ``variant="realized"`` uses the initial overlaps ``vbar2_init[p]``;
    ``variant="typical"`` replaces them by :func:`typical_overlap_sq` (needs ``d``, ``m``).
    """
    a = np.asarray(a, dtype=float)
    if variant == "typical":
        if d is None or m is None:
            raise ValueError("the typical variant needs d and m")
        vbar2 = [typical_overlap_sq(d, m)] * len(pi)
    elif variant == "realized":
        vbar2 = list(vbar2_init)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    T = tuple(predicted_time(a[q], v, eta, act) for q, v in zip(pi, vbar2))
    thresholds = np.full(a.size, math.inf)
    for q, Tq in zip(pi, T):
        thresholds[q] = Tq
    exps = scaling_exponents(beta) if beta is not None and beta > 0.5 else None
    return Prediction(variant, T, tuple(thresholds), tuple(a**2), exps)
