"""Normalized Hermite polynomials and even activations with high information exponent.

All polynomials are the probabilists' Hermite polynomials normalized against the
standard Gaussian measure, ``h_k = He_k / sqrt(k!)``, so that
``E[h_j(Z) h_k(Z)] = delta_jk`` for ``Z ~ N(0, 1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

COEFF_TOL = 1e-8
REJECT_TOL = 1e-6
NORM_TOL = 1e-10


class ActivationError(ValueError):
    """Raised when a function cannot be used as an activation."""


def hermite_eval(k: int, x):
    """Evaluate ``h_k`` at ``x`` (scalar or array).

    Uses the normalized form of ``He_{k+1} = x He_k - k He_{k-1}``, which keeps
    the iterates O(1) instead of O(sqrt(k!)).
    """
    if k < 0:
        raise ValueError(f"degree must be >= 0, got {k}")
    x = np.asarray(x, dtype=float)
    h_prev = np.zeros_like(x)
    h = np.ones_like(x)
    for j in range(k):
        h_prev, h = h, (x * h - math.sqrt(j) * h_prev) / math.sqrt(j + 1)
    return h if h.ndim else float(h)


def hermite_deriv_eval(k: int, x):
    """Derivative of ``h_k``; uses ``h_k' = sqrt(k) h_{k-1}`` (zero for k = 0)."""
    if k < 0:
        raise ValueError(f"degree must be >= 0, got {k}")
    if k == 0:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        return out if out.ndim else 0.0
    return math.sqrt(k) * hermite_eval(k - 1, x)


def hermite_table(max_degree: int, x) -> np.ndarray:
    """Stack ``h_0(x), ..., h_D(x)`` along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = x
    for j in range(1, max_degree):
        out[j + 1] = (x * out[j] - math.sqrt(j) * out[j - 1]) / math.sqrt(j + 1)
    return out


def gauss_hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with ``sum(w * g(x)) ~= E[g(Z)]``, exact up to degree 2n-1."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return nodes, weights / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Activation:
    """Even activation ``sigma = sum_i c_{2i} h_{2i}`` with ``IE(sigma) = 2I``.

    ``coeffs`` maps degree to coefficient; ``info_exponent_half`` is ``I``;
    ``max_degree`` is the truncation degree the expansion was computed at.
    """

    coeffs: Mapping[int, float]
    info_exponent_half: int
    max_degree: int
    _dense: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = {int(k): float(v) for k, v in self.coeffs.items() if v != 0.0}
        if not coeffs:
            raise ActivationError("activation has no nonzero Hermite coefficients")
        I = self.info_exponent_half
        if I < 2:
            raise ActivationError(f"information exponent 2I needs I >= 2, got I={I}")
        for k in coeffs:
            if k % 2 or k < 2 * I:
                raise ActivationError(f"degree {k} is odd or below 2I={2 * I}")
        if 2 * I not in coeffs:
            raise ActivationError(f"coefficient at degree 2I={2 * I} must be nonzero")
        norm_sq = sum(v * v for v in coeffs.values())
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise ActivationError(f"sum of squared coefficients is {norm_sq!r}, expected 1")
        max_degree = max(self.max_degree, max(coeffs))
        dense = np.zeros(max_degree + 1)
        for k, v in coeffs.items():
            dense[k] = v
        object.__setattr__(self, "coeffs", dict(sorted(coeffs.items())))
        object.__setattr__(self, "max_degree", max_degree)
        object.__setattr__(self, "_dense", dense)

    @property
    def info_exponent(self) -> int:
        return 2 * self.info_exponent_half

    @property
    def leading_coeff(self) -> float:
        return self.coeffs[self.info_exponent]

    @property
    def top_degree(self) -> int:
        return max(self.coeffs)

    def to_dict(self) -> dict:
        return {
            "coeffs": {str(k): v for k, v in self.coeffs.items()},
            "info_exponent": self.info_exponent,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Activation":
        coeffs = {int(k): float(v) for k, v in data["coeffs"].items()}
        ie = int(data.get("info_exponent", min(coeffs)))
        if ie % 2:
            raise ActivationError(f"information exponent must be even, got {ie}")
        return cls(coeffs, ie // 2, int(data.get("max_degree", max(coeffs))))

    @classmethod
    def from_json(cls, text: str) -> "Activation":
        return cls.from_dict(json.loads(text))

    def __call__(self, z):
        return activation_eval(self, z)


def hermite_activation(k: int) -> Activation:
    """The pure activation ``sigma = h_k`` for even ``k >= 4``."""
    return Activation({k: 1.0}, k // 2, k)


def activation_from_coeffs(coeffs: Mapping[int, float]) -> Activation:
    """Build an activation from raw (possibly unnormalized) even coefficients."""
    coeffs = {int(k): float(v) for k, v in coeffs.items() if v != 0.0}
    if not coeffs:
        raise ActivationError("all-zero expansion")
    scale = math.sqrt(sum(v * v for v in coeffs.values()))
    coeffs = {k: v / scale for k, v in coeffs.items()}
    return Activation(coeffs, min(coeffs) // 2, max(coeffs))


def expand_activation(
    f: Callable[[np.ndarray], np.ndarray],
    max_degree: int | None = None,
    quad_points: int | None = None,
) -> Activation:
    """Hermite-expand ``f`` by Gauss-Hermite quadrature and rescale to unit L2 norm.

    Without ``max_degree`` the expansion is first probed up to degree 40 to find
    the information exponent, then truncated at ``2I + 8``.
    """
    if max_degree is None:
        probe = _raw_coefficients(f, 40, 81)
        probe = _normalize(probe)
        even_big = [k for k in range(0, 41, 2) if abs(probe[k]) > REJECT_TOL]
        if not even_big:
            raise ActivationError("all-zero expansion")
        max_degree = max(even_big[0], 4) + 8
    if quad_points is None:
        quad_points = 2 * max_degree + 1
    if quad_points < max_degree + 1:
        raise ValueError(f"need at least {max_degree + 1} quadrature nodes, got {quad_points}")
    raw = _normalize(_raw_coefficients(f, max_degree, quad_points))
    for k, v in enumerate(raw):
        if (k % 2 or k < 4) and abs(v) > REJECT_TOL:
            raise ActivationError(
                f"coefficient at degree {k} is {v:.3g}; activation must be even "
                "with information exponent >= 4"
            )
    coeffs = {k: float(v) for k, v in enumerate(raw) if k % 2 == 0 and k >= 4 and abs(v) > COEFF_TOL}
    if not coeffs:
        raise ActivationError("all-zero expansion")
    scale = math.sqrt(sum(v * v for v in coeffs.values()))
    coeffs = {k: v / scale for k, v in coeffs.items()}
    return Activation(coeffs, min(coeffs) // 2, max_degree)


def _raw_coefficients(f, max_degree: int, n: int) -> np.ndarray:
    nodes, weights = gauss_hermite_rule(n)
    values = np.asarray(f(nodes), dtype=float)
    return hermite_table(max_degree, nodes) @ (weights * values)


def _normalize(c: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(c)
    if norm == 0.0 or not np.isfinite(norm):
        raise ActivationError("all-zero expansion")
    return c / norm


def activation_eval(act: Activation, z):
    """``sigma(z) = sum_i c_{2i} h_{2i}(z)``, vectorized over ``z``."""
    value, _ = activation_eval_with_deriv(act, z, deriv=False)
    return value


def activation_deriv(act: Activation, z):
    _, deriv = activation_eval_with_deriv(act, z, value=False)
    return deriv


def activation_eval_with_deriv(act: Activation, z, value: bool = True, deriv: bool = True):
    """Evaluate ``sigma`` and ``sigma'`` in one pass of the Hermite recursion."""
    z = np.asarray(z, dtype=float)
    c = act._dense
    top = act.top_degree
    out = np.zeros_like(z) if value else None
    dout = np.zeros_like(z) if deriv else None
    h_prev = np.zeros_like(z)
    h = np.ones_like(z)
    for j in range(top):
        # h holds h_j here; h_{j+1}' = sqrt(j+1) h_j
        if deriv and c[j + 1] != 0.0:
            dout += (c[j + 1] * math.sqrt(j + 1)) * h
        h_prev, h = h, (z * h - math.sqrt(j) * h_prev) / math.sqrt(j + 1)
        if value and c[j + 1] != 0.0:
            out += c[j + 1] * h
    if z.ndim == 0:
        return (float(out) if value else None), (float(dout) if deriv else None)
    return out, dout


def correlation_kernel(act: Activation, c):
    """``K(c) = sum_i c_{2i}^2 c^{2i} = E[sigma(u.x) sigma(v.x)]`` for unit ``u, v`` with ``<u, v> = c``."""
    c = np.asarray(c, dtype=float)
    c2 = c * c
    out = np.zeros_like(c)
    for k, v in act.coeffs.items():
        out += (v * v) * c2 ** (k // 2)
    return out if out.ndim else float(out)


def correlation_kernel_deriv(act: Activation, c):
    """``K'(c) = sum_i 2i c_{2i}^2 c^{2i-1}``."""
    c = np.asarray(c, dtype=float)
    c2 = c * c
    out = np.zeros_like(c)
    for k, v in act.coeffs.items():
        out += (k * v * v) * c * c2 ** (k // 2 - 1)
    return out if out.ndim else float(out)
