import json
from dataclasses import replace

import numpy as np
import pytest

from hermite_flow.cli import main
from hermite_flow.config import (
    OPTION_DEFAULTS,
    TOLERANCE_DEFAULTS,
    ConfigError,
    ExperimentSpec,
    parse_config,
    spec_from_dict,
)
from hermite_flow.dynamics import RunConfig, run
from hermite_flow.experiments import (
    Report,
    RunResult,
    compute_frontier,
    derive_seed,
    plateau_level,
    run_experiment,
)
from hermite_flow.plotting import RUNS_HEADER, emit_plots, staircase_points
from hermite_flow.theory import predict, predicted_time


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


MINIMAL = {"kind": "emergence", "base": {"d": 32, "P": 2, "m": 3, "eta": 0.05, "sigma0": 0.1, "beta": 0.8}}


def test_parse_minimal_defaults(tmp_path):
    spec = parse_config(write_cfg(tmp_path, MINIMAL))
    assert spec.kind == "emergence"
    assert spec.base.steps == 0 and spec.base.seed == 0 and spec.base.mode == "population_gd"
    assert spec.base.activation.coeffs == {4: 1.0}
    assert spec.tolerances == TOLERANCE_DEFAULTS
    assert spec.options == OPTION_DEFAULTS
    assert spec.sweep == {}


def test_parse_unknown_key_suggests_eta(tmp_path):
    bad = {"kind": "emergence", "base": {**MINIMAL["base"], "lr": 0.1}}
    with pytest.raises(ConfigError, match=r"'lr'.*'eta'"):
        parse_config(write_cfg(tmp_path, bad))
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(write_cfg(tmp_path, {**MINIMAL, "extra": 1}))
    with pytest.raises(ConfigError, match="tolerance"):
        parse_config(write_cfg(tmp_path, {**MINIMAL, "tolerances": {"slope_tl": 0.1}}))


def test_parse_scaling_heavy_tail(tmp_path):
    data = {"kind": "scaling", "base": {**MINIMAL["base"], "beta": 0.4}}
    with pytest.raises(ConfigError, match="beta > 1/2"):
        parse_config(write_cfg(tmp_path, data))


def test_parse_errors(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(p)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError, match="non-empty"):
        spec_from_dict({**MINIMAL, "sweep": {"m": []}})
    with pytest.raises(ConfigError, match="positive"):
        spec_from_dict({**MINIMAL, "tolerances": {"slope_tol": -1}})
    with pytest.raises(ConfigError, match="missing"):
        spec_from_dict({"kind": "emergence", "base": {"d": 3}})
    with pytest.raises(ConfigError, match="kind"):
        spec_from_dict({**MINIMAL, "kind": "bogus"})
    with pytest.raises(ConfigError, match="activation"):
        spec_from_dict({**MINIMAL, "base": {**MINIMAL["base"], "activation": "h3"}})


def test_activation_shorthand_and_sweep_points():
    spec = spec_from_dict({**MINIMAL, "base": {**MINIMAL["base"], "activation": "h6"}, "sweep": {"m": [2, 3], "seed": [0, 1]}})
    assert spec.base.activation.info_exponent == 6
    keys = [k for k, _ in spec.points()]
    assert keys == ["m=2,seed=0", "m=2,seed=1", "m=3,seed=0", "m=3,seed=1"]
    assert [c.m for _, c in spec.points()] == [2, 2, 3, 3]


def test_derive_seed_stable():
    assert derive_seed(0, "scaling", "m=64") == derive_seed(0, "scaling", "m=64")
    assert derive_seed(0, "scaling", "m=64") != derive_seed(0, "scaling", "m=32")
    assert derive_seed(0, "scaling", "m=64") != derive_seed(1, "scaling", "m=64")
    assert 0 <= derive_seed(2**64 - 1, "validate", "base") < 2**64


def one_run_report():
    cfg = RunConfig(d=24, P=2, m=3, eta=0.05, sigma0=0.1, steps=400, beta=0.8, seed=4)
    log = run(cfg)
    pred = predict(cfg.teacher().a, log.selection.pi, log.initial_overlaps, cfg.eta, cfg.activation)
    rep = Report("emergence", {})
    rep.runs = [RunResult("base", log, pred)]
    return rep, log, pred, cfg


def test_emit_plots_empty(tmp_path):
    paths = emit_plots(Report("emergence", {}), tmp_path)
    assert [p.name for p in paths] == ["runs.csv"]
    assert (tmp_path / "runs.csv").read_text() == RUNS_HEADER + "\n"
    assert not list(tmp_path.glob("*.svg"))


def test_emit_plots_one_run_two_svgs(tmp_path):
    rep, *_ = one_run_report()
    emit_plots(rep, tmp_path)
    svgs = sorted(p.name for p in tmp_path.glob("*.svg"))
    assert svgs == ["loss_base.svg", "overlaps_base.svg"]
    assert len((tmp_path / "runs.csv").read_text().splitlines()) == 2


def test_plots_deterministic(tmp_path):
    rep, *_ = one_run_report()
    emit_plots(rep, tmp_path / "a")
    emit_plots(rep, tmp_path / "b")
    for name in ("loss_base.svg", "overlaps_base.svg", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_staircase_positions_equal_predicted_times():
    rep, log, pred, cfg = one_run_report()
    T, levels = staircase_points(pred)
    a = cfg.teacher().a
    expected = sorted(
        predicted_time(a[q], x0, cfg.eta, cfg.activation) for q, x0 in zip(log.selection.pi, log.initial_overlaps)
    )
    np.testing.assert_allclose(T, expected, rtol=1e-12)
    assert levels[-1] == pytest.approx(0.0)


def test_plateau_level():
    a = np.array([0.8, 0.48, 0.36])
    P_star, level = plateau_level(a, 3)
    assert P_star == 2
    assert level == pytest.approx(0.36**2)


def test_compute_frontier_min_over_widths():
    t = np.geomspace(1, 1000, 50)
    series = {2: np.column_stack([t, 1 / t]), 4: np.column_stack([t, 0.5 / t**0.5])}
    F = compute_frontier(series, 10)
    for B, L, m in F:
        cands = {2: 1 / (B / 2), 4: 0.5 / (B / 4) ** 0.5}
        assert L == pytest.approx(min(cands.values()), rel=1e-9)
        assert m == min(cands, key=cands.get)


def small_emergence_spec(out, **kw):
    base = RunConfig(d=48, P=2, m=3, eta=0.05, sigma0=0.1, steps=600, beta=0.8)
    return ExperimentSpec("emergence", base, sweep={"seed": [0, 1, 2]}, output_dir=str(out), **kw)


def test_sweep_order_and_threads_independent(tmp_path):
    s1 = small_emergence_spec(tmp_path / "a")
    s2 = replace(small_emergence_spec(tmp_path / "b"), sweep={"seed": [2, 0, 1]})
    r1 = run_experiment(s1, threads=1)
    r2 = run_experiment(s2, threads=3)
    assert r1.seeds == r2.seeds
    for csv in (tmp_path / "a").glob("trajectory_*.csv"):
        assert csv.read_bytes() == (tmp_path / "b" / csv.name).read_bytes()


def test_repeated_experiment_byte_identical(tmp_path):
    run_experiment(small_emergence_spec(tmp_path / "a"))
    run_experiment(small_emergence_spec(tmp_path / "b"))
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.suffix in (".csv", ".svg"))
    assert names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_cites_tolerances(tmp_path):
    rep = run_experiment(small_emergence_spec(tmp_path))
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["kind"] == "emergence"
    assert data["criteria"]
    assert all(c["tolerance"] for c in data["criteria"])
    assert data["passed"] == rep.passed
    assert set(data["seeds"]) == {"seed=0", "seed=1", "seed=2"}


def test_divergence_is_a_failed_run(tmp_path):
    base = RunConfig(d=16, P=2, m=3, eta=80.0, sigma0=0.1, steps=500, beta=0.8)
    rep = run_experiment(ExperimentSpec("emergence", base, output_dir=str(tmp_path)))
    assert not rep.criterion("no_divergence").passed
    assert rep.runs[0].log.status == "diverged"
    assert not rep.passed


def test_cli_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["emergence", "--config", str(tmp_path / "nope.json")]) == 2
    p = write_cfg(tmp_path, MINIMAL)
    assert main(["scaling", "--config", str(p)]) == 2
    bad = write_cfg(tmp_path, {"kind": "emergence", "base": {**MINIMAL["base"], "lr": 1}}, "bad.json")
    assert main(["emergence", "--config", str(bad)]) == 2
    assert "eta" in capsys.readouterr().err


def test_cli_pass_and_progress(tmp_path, capsys):
    data = {
        "kind": "init_gaps",
        "base": {"d": 1000, "P": 2, "m": 1, "eta": 1.0, "sigma0": 1.0, "a": [0.7071067811865476, 0.7071067811865475]},
        "options": {"trials": 2000, "gap_seeds": 50},
    }
    p = write_cfg(tmp_path, data)
    code = main(["init_gaps", "--config", str(p), "--out", str(tmp_path / "out"), "--seed", "3"])
    out = capsys.readouterr().out
    assert code == 0, out
    assert (tmp_path / "out" / "gap_distribution.csv").read_text().startswith("delta,empirical_freq,cauchy_bound")


def test_cli_failure_exit_code(tmp_path, capsys, monkeypatch):
    data = {
        "kind": "single_index",
        "base": {"d": 64, "P": 1, "m": 1, "eta": 0.01, "sigma0": 0.01, "a": [1.0]},
        "tolerances": {"ode_rel_tol": 1e-9},
    }
    p = write_cfg(tmp_path, data)
    monkeypatch.setenv("HERMITE_FLOW_THREADS", "2")
    code = main(["single_index", "--config", str(p), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1
    lines = [ln for ln in err.splitlines() if ln.startswith("t=")]
    assert lines and lines[0].startswith("t=0 loss=")
    monkeypatch.setenv("HERMITE_FLOW_THREADS", "zero")
    assert main(["single_index", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_compute_optimal_budget_and_frontier_csv(tmp_path):
    data = {
        "kind": "compute_optimal",
        "base": {"d": 24, "P": 8, "m": 2, "eta": 0.1, "sigma0": 0.1, "beta": 0.8},
        "sweep": {"m": [2, 4]},
        "options": {"compute_budget": 2000, "budget_points": 8, "loss_window": [1.5, 0.01]},
        "output_dir": str(tmp_path),
    }
    rep = run_experiment(spec_from_dict(data))
    steps = {r.key: r.log.times[-1] for r in rep.runs}
    assert steps == {"m=2": 1000, "m=4": 500}
    lines = (tmp_path / "frontier.csv").read_text().splitlines()
    assert lines[0] == "budget,loss,m" and len(lines) == 9
    for line in lines[1:]:
        b, L, m = line.split(",")
        float(b), float(L)
        assert m in ("2", "4")
    with pytest.raises(ConfigError, match="compute_budget"):
        spec_from_dict({**data, "options": {"compute_budget": -1}})
