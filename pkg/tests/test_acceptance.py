"""Desk-scale gating experiments, one test per criterion.

Each test records a single PASS/FAIL line (printed, and repeated in the
terminal summary). Tolerances are the stated ones; a criterion that the
dynamics do not meet is left failing rather than loosened.
"""

import math
import time

import numpy as np
import pytest

from hermite_flow.config import spec_from_dict
from hermite_flow.dynamics import gd_step, init_student
from hermite_flow.experiments import derive_seed, run_experiment, validation_suite
from hermite_flow.hermite import hermite_activation
from hermite_flow.model import (
    StudentState,
    load_snapshot,
    power_law_coefficients,
    power_law_teacher,
    save_snapshot,
)
from hermite_flow.theory import suggested_learning_rate

H4 = hermite_activation(4)


def summarize(report, names):
    crits = [c for c in report.criteria if any(c.name == n or c.name.startswith(n + "[") for n in names)]
    assert crits, f"no criteria named {names}"
    passed = all(c.passed for c in crits)
    detail = "; ".join(f"{c.name}={c.value:.4g}" if isinstance(c.value, float) else f"{c.name}={c.value}" for c in crits)
    return passed, detail, crits


@pytest.fixture(scope="module")
def validation():
    start = time.perf_counter()
    crits, meas = validation_suite(derive_seed(0, "validate", "base"))
    return {c.name: c for c in crits}, meas, time.perf_counter() - start


def test_criterion_1_closed_forms(validation, acceptance_line):
    crits, meas, runtime = validation
    mc, fd, sfd = crits["mc_loss"], crits["grad_fd"], crits["sample_grad_fd"]
    ok = mc.passed and fd.passed and sfd.passed and runtime < 120
    acceptance_line(
        1,
        ok,
        f"MC within 3 SE on {int(mc.value)}/50 (need 47), grad FD {fd.value:.2e}, "
        f"sample grad FD {sfd.value:.2e} (<= 1e-5), {runtime:.0f}s (< 120s)",
    )
    assert mc.value >= 47
    assert fd.value <= 1e-5 and sfd.value <= 1e-5
    assert runtime < 120


def test_criterion_2_zero_mean_noise(validation, acceptance_line):
    crits, meas, runtime = validation
    c = crits["sample_grad_mean"]
    acceptance_line(2, c.passed and runtime < 120, f"worst |z| = {c.value:.3f} over 10 instances ({c.detail}), <= 3 SE each")
    assert c.passed
    assert runtime < 120


@pytest.mark.slow
def test_criterion_3_single_index_ode(tmp_path, acceptance_line):
    spec = spec_from_dict(
        {
            "kind": "single_index",
            "base": {"d": 256, "P": 1, "m": 1, "eta": 1e-3, "sigma0": 0.01, "a": [1.0]},
            "tolerances": {"ode_rel_tol": 0.10, "time_rel_tol": 0.30},
            "output_dir": str(tmp_path),
        }
    )
    rep = run_experiment(spec)
    passed, detail, _ = summarize(rep, ["ode_tracking", "transition_time"])
    ok = passed and rep.runtime_s < 60
    acceptance_line(3, ok, f"{detail} (ode <= 0.10, |ratio-1| <= 0.30), {rep.runtime_s:.0f}s (< 60s)")
    assert rep.criterion("transition_time[base]").passed
    assert rep.criterion("ode_tracking[base]").passed
    assert rep.runtime_s < 60


@pytest.fixture(scope="module")
def emergence_report(tmp_path_factory):
    spec = spec_from_dict(
        {
            "kind": "emergence",
            "base": {"d": 512, "P": 8, "m": 24, "eta": 0.02, "sigma0": 0.1, "beta": 0.8},
            "tolerances": {"time_rel_tol": 0.25, "norm_rel_tol": 0.05},
            "options": {"horizon": 2.5},
            "output_dir": str(tmp_path_factory.mktemp("emergence")),
        }
    )
    return run_experiment(spec)


@pytest.mark.slow
def test_criterion_4_sharp_transition(emergence_report, acceptance_line):
    rep = emergence_report
    names = ["no_divergence", "all_detected", "time_ratios", "pre_transition", "unused_norms"]
    passed, detail, crits = summarize(rep, names)
    ok = passed and rep.runtime_s < 600
    acceptance_line(4, ok, f"{detail}, {rep.runtime_s:.0f}s (< 600s)")
    for c in crits:
        assert c.passed, f"{c.name}: {c.value} vs {c.tolerance}"
    assert rep.runtime_s < 600


@pytest.mark.slow
def test_criterion_5_norm_convergence(emergence_report, acceptance_line):
    passed, detail, crits = summarize(emergence_report, ["norm_convergence"])
    acceptance_line(5, passed, f"{detail} (<= 0.05 at 2 t_hat)")
    assert passed


@pytest.mark.slow
def test_criterion_6_scaling_law(tmp_path, acceptance_line):
    spec = spec_from_dict(
        {
            "kind": "scaling",
            "base": {"d": 512, "P": 256, "m": 600, "eta": 0.1, "sigma0": 0.1, "beta": 0.8, "steps": 12000},
            "tolerances": {"slope_tol": 0.15},
            "options": {"plateau_m": 64, "plateau_factor": 3.0, "loss_window": [0.5, 0.02]},
            "output_dir": str(tmp_path),
        }
    )
    rep = run_experiment(spec)
    passed, detail, crits = summarize(rep, ["no_divergence", "slope", "plateau"])
    ok = passed and rep.runtime_s < 2700
    acceptance_line(6, ok, f"{detail} (slope -0.75 +/- 0.15, plateau ratio in [1/3, 3]), {rep.runtime_s:.0f}s (< 2700s)")
    for c in crits:
        assert c.passed, f"{c.name}: {c.value} vs {c.tolerance}"
    assert rep.runtime_s < 2700


@pytest.mark.slow
def test_criterion_7_compute_optimal(tmp_path, acceptance_line):
    spec = spec_from_dict(
        {
            "kind": "compute_optimal",
            "base": {"d": 512, "P": 256, "m": 32, "eta": 0.1, "sigma0": 0.1, "beta": 0.8},
            "sweep": {"m": [32, 64, 128, 256]},
            # [-0.45, -0.25]
            "tolerances": {"slope_tol": 0.10},
            "options": {"target_slope": -0.35, "compute_budget": 256 * 40000},
            "output_dir": str(tmp_path),
        }
    )
    rep = run_experiment(spec)
    passed, detail, crits = summarize(rep, ["no_divergence", "frontier_slope"])
    ok = passed and rep.runtime_s < 7200
    acceptance_line(7, ok, f"{detail} (in [-0.45, -0.25]), {rep.runtime_s:.0f}s (< 7200s)")
    slope = rep.criterion("frontier_slope").value
    assert slope is not None and -0.45 <= slope <= -0.25
    assert rep.runtime_s < 7200


@pytest.mark.slow
def test_criterion_8_init_gaps(tmp_path, acceptance_line):
    spec = spec_from_dict(
        {
            "kind": "init_gaps",
            "base": {"d": 1000, "P": 2, "m": 1, "eta": 1.0, "sigma0": 1.0, "a": [math.sqrt(0.5), math.sqrt(0.5)]},
            "options": {"trials": 100_000, "bound_slack": 0.2, "gap_seeds": 1000, "gap_d": 400, "gap_m": 40, "gap_P": 20},
            "output_dir": str(tmp_path),
        }
    )
    rep = run_experiment(spec)
    passed, detail, crits = summarize(rep, ["collision", "gaps_positive"])
    ok = passed and rep.runtime_s < 300
    acceptance_line(8, ok, f"{detail} (freq <= 1.2 * 2 delta / pi, positive in >= 0.99), {rep.runtime_s:.0f}s (< 300s)")
    for c in crits:
        assert c.passed, f"{c.name}: {c.value} vs {c.tolerance}"
    assert rep.runtime_s < 300


@pytest.mark.slow
def test_criterion_9_online_sgd_consistency(tmp_path, acceptance_line):
    d = 128
    a = power_law_coefficients(2, 0.8)
    eta = suggested_learning_rate(float(a.min()), d, H4)  # a_min d^-I
    spec = spec_from_dict(
        {
            "kind": "emergence",
            "base": {"d": d, "P": 2, "m": 6, "eta": eta, "sigma0": 0.1, "beta": 0.8},
            "tolerances": {"loss_rel_tol": 0.15},
            "options": {"replicas": 20, "horizon": 1.3},
            "output_dir": str(tmp_path),
        }
    )
    rep = run_experiment(spec)
    passed, detail, crits = summarize(rep, ["no_divergence", "sgd_tracks_gd", "overlap_diagnostics"])
    extra = "; ".join(c.detail for c in crits if c.detail)
    ok = passed and rep.runtime_s < 1800
    acceptance_line(9, ok, f"eta={eta:.3g}: {detail} ({extra}), {rep.runtime_s:.0f}s (< 1800s)")
    for c in crits:
        assert c.passed, f"{c.name}: {c.value} vs {c.tolerance} {c.detail}"
    assert rep.runtime_s < 1800


def test_criterion_10_determinism_and_snapshots(tmp_path, acceptance_line):
    data = {
        "kind": "emergence",
        "base": {"d": 64, "P": 4, "m": 6, "eta": 0.05, "sigma0": 0.1, "beta": 0.8, "steps": 3000},
        "sweep": {"seed": [0, 1]},
    }
    for sub in ("a", "b"):
        run_experiment(spec_from_dict({**data, "output_dir": str(tmp_path / sub)}))
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same_csv = bool(csvs) and all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in csvs)

    teacher = power_law_teacher(4, 64, 0.8)
    student = init_student(64, 6, 0.1, 5)
    round_trips = []
    for i in range(3):
        student = StudentState(gd_step(student, 0.05, teacher, H4).V, i + 1)
        path = tmp_path / f"snap{i}.bin"
        save_snapshot(path, teacher, student)
        t2, s2 = load_snapshot(path)
        save_snapshot(tmp_path / f"again{i}.bin", t2, s2)
        round_trips.append(
            np.array_equal(s2.V, student.V)
            and np.array_equal(t2.a, teacher.a)
            and s2.step == student.step
            and path.read_bytes() == (tmp_path / f"again{i}.bin").read_bytes()
        )
    ok = same_csv and all(round_trips)
    acceptance_line(10, ok, f"{len(csvs)} CSVs byte-identical: {same_csv}; snapshots exact: {sum(round_trips)}/3")
    assert same_csv
    assert all(round_trips)
