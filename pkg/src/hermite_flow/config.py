"""Experiment specification and its strict JSON parser.

A config file is one JSON object::

    {
      "kind": "emergence",
      "base": {"d": 512, "P": 8, "m": 24, "eta": 0.02, "sigma0": 0.1, "beta": 0.8},
      "sweep": {"seed": [0, 1, 2]},
      "output_dir": "out/emergence",
      "tolerances": {"time_rel_tol": 0.25},
      "options": {"horizon": 2.5}
    }

Every default lives in :data:`BASE_DEFAULTS`, :data:`TOLERANCE_DEFAULTS` and
:data:`OPTION_DEFAULTS`.
"""

from __future__ import annotations

import difflib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dynamics import RunConfig
from .hermite import Activation, ActivationError, hermite_activation

KINDS = ("validate", "single_index", "emergence", "scaling", "compute_optimal", "init_gaps")
SWEEP_AXES = ("m", "eta", "beta", "seed")

BASE_DEFAULTS = {
    "steps": 0,
    "seed": 0,
    "mode": "population_gd",
    "beta": None,
    "a": None,
    "P_star": None,
    "log_stride": 1.1,
    "log_dense": 1000,
    "activation": {"coeffs": {"4": 1.0}, "info_exponent": 4},
}
BASE_REQUIRED = ("d", "P", "m", "eta", "sigma0")

TOLERANCE_DEFAULTS = {
    "loss_rel_tol": 0.15,
    "grad_rel_tol": 1e-5,
    "time_rel_tol": 0.3,
    "slope_tol": 0.15,
    "ode_rel_tol": 0.10,
    "norm_rel_tol": 0.05,
}

OPTION_DEFAULTS = {
    # emergence detection
    "threshold": 0.5,
    # steps = ceil(horizon * max predicted time) when base.steps is 0
    "horizon": 2.5,
    "max_steps": 10_000_000,
    # emergence: number of online-SGD seeds compared against matched population GD
    "replicas": 1,
    # scaling / compute_optimal
    "loss_window": [0.5, 0.02],
    "target_slope": None,
    "plateau_m": None,
    "plateau_factor": 3.0,
    "budget_points": 24,
    # compute_optimal: when set, steps = ceil(compute_budget / m) per width
    "compute_budget": None,
    # validate
    "instances": 10,
    "mc_samples": 100_000,
    # init_gaps
    "trials": 100_000,
    "deltas": [0.005, 0.01, 0.02, 0.05, 0.1],
    "bound_slack": 0.2,
    "gap_seeds": 1000,
    "gap_d": 400,
    "gap_m": 40,
    "gap_P": 20,
    "gap_beta": 0.8,
}

TOP_LEVEL = ("kind", "base", "sweep", "output_dir", "tolerances", "options")
ALIASES = {"lr": "eta", "learning_rate": "eta", "width": "m", "n_steps": "steps", "sigma_0": "sigma0"}


class ConfigError(ValueError):
    """Malformed or out-of-range experiment configuration."""


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    base: RunConfig
    sweep: dict = field(default_factory=dict)
    output_dir: str = "hermite_flow_out"
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_DEFAULTS))
    options: dict = field(default_factory=lambda: dict(OPTION_DEFAULTS))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(_unknown("sweep axis", axis, SWEEP_AXES))
            if not values:
                raise ConfigError(f"sweep list for {axis!r} must be non-empty")
        for name, tol in self.tolerances.items():
            if not (isinstance(tol, (int, float)) and tol > 0):
                raise ConfigError(f"tolerance {name!r} must be positive, got {tol!r}")
        tols = dict(TOLERANCE_DEFAULTS)
        tols.update(self.tolerances)
        opts = dict(OPTION_DEFAULTS)
        opts.update(self.options)
        object.__setattr__(self, "tolerances", tols)
        object.__setattr__(self, "options", opts)
        if self.kind in ("scaling", "compute_optimal"):
            betas = self.sweep.get("beta", [self.base.beta])
            for b in betas:
                if b is None or b <= 0.5:
                    raise ConfigError(
                        f"kind={self.kind} needs beta > 1/2 (power-law regime), got beta={b}"
                    )
        if self.kind == "compute_optimal" and len(self.sweep.get("m", [])) < 2:
            raise ConfigError("compute_optimal needs a sweep over at least two widths m")

    def points(self) -> list[tuple[str, RunConfig]]:
        """Sweep points as ``(key, config)``; the key names the point independently of order."""
        if not self.sweep:
            return [("base", self.base)]
        axes = sorted(self.sweep)
        out = [("", {})]
        for axis in axes:
            out = [
                (f"{key},{axis}={v}" if key else f"{axis}={v}", {**kw, axis: v})
                for key, kw in out
                for v in self.sweep[axis]
            ]
        return [(key, _with(self.base, kw)) for key, kw in out]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base": self.base.to_dict(),
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "output_dir": str(self.output_dir),
            "tolerances": dict(self.tolerances),
            "options": dict(self.options),
        }


def _with(base: RunConfig, kw: dict) -> RunConfig:
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(f"invalid sweep point {kw}: {exc}") from exc


def _unknown(what: str, key: str, allowed) -> str:
    msg = f"unknown {what} {key!r}"
    guess = ALIASES.get(key)
    if guess is None or guess not in allowed:
        close = difflib.get_close_matches(key, list(allowed), n=1)
        guess = close[0] if close else None
    if guess:
        msg += f"; did you mean {guess!r}?"
    return msg


def _check_keys(data: dict, allowed, what: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(_unknown(what, key, allowed))


def _parse_activation(value) -> Activation:
    if isinstance(value, str):
        if not value.startswith("h") or not value[1:].isdigit():
            raise ConfigError(f"activation shorthand must look like 'h4', got {value!r}")
        k = int(value[1:])
        if k < 4 or k % 2:
            raise ConfigError(f"activation h{k} must have even degree >= 4")
        return hermite_activation(k)
    try:
        return Activation.from_dict(value)
    except (ActivationError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid activation: {exc}") from exc


def spec_from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(data, TOP_LEVEL, "key")
    if "kind" not in data or "base" not in data:
        raise ConfigError("config needs 'kind' and 'base'")
    base = data["base"]
    if not isinstance(base, dict):
        raise ConfigError("'base' must be an object")
    _check_keys(base, BASE_REQUIRED + tuple(BASE_DEFAULTS), "base key")
    missing = [k for k in BASE_REQUIRED if k not in base]
    if missing:
        raise ConfigError(f"base is missing required keys: {', '.join(missing)}")
    fields = dict(BASE_DEFAULTS)
    fields.update(base)
    fields["activation"] = _parse_activation(fields["activation"])
    if fields["a"] is not None:
        fields["a"] = tuple(fields["a"])
    if fields["beta"] is None and fields["a"] is None:
        raise ConfigError("base needs either 'beta' or 'a'")
    try:
        run_cfg = RunConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid base: {exc}") from exc

    sweep = data.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("'sweep' must be an object of lists")
    for axis, values in sweep.items():
        if axis not in SWEEP_AXES:
            raise ConfigError(_unknown("sweep axis", axis, SWEEP_AXES))
        if not isinstance(values, list):
            raise ConfigError(f"sweep over {axis!r} must be a list")
    tolerances = data.get("tolerances") or {}
    _check_keys(tolerances, tuple(TOLERANCE_DEFAULTS), "tolerance")
    options = data.get("options") or {}
    _check_keys(options, tuple(OPTION_DEFAULTS), "option")
    for name in ("threshold",):
        if name in options and not 0 < options[name] < 1:
            raise ConfigError(f"option {name!r} must lie in (0, 1)")
    cb = options.get("compute_budget")
    if cb is not None and not (isinstance(cb, (int, float)) and cb > 0):
        raise ConfigError("option 'compute_budget' must be a positive number")
    if "loss_window" in options:
        w = options["loss_window"]
        if len(w) != 2 or min(w) <= 0 or not all(math.isfinite(x) for x in w):
            raise ConfigError("loss_window must be two positive numbers")
    return ExperimentSpec(
        kind=data["kind"],
        base=run_cfg,
        sweep={k: list(v) for k, v in sweep.items()},
        output_dir=str(data.get("output_dir", "hermite_flow_out")),
        tolerances=tolerances,
        options=options,
    )


def parse_config(path) -> ExperimentSpec:
    """Read and validate a JSON experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return spec_from_dict(data)
