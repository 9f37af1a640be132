"""
Tests for the branching bound and its coupling with the dual.
"""
import math

import numpy as np
import pytest
from scipy import stats

from sbm_lab.core.errors import PreconditionError
from sbm_lab.numerics.branching import (
    RootFlow,
    admissible_gamma,
    borel_tanner_pmf,
    coupled_runs,
    generation_bound_check,
    generation_means,
    progeny_parameter,
    simulate_branching,
    simulate_branching_runs,
    small_horizon,
    total_progeny_sample,
)
from sbm_lab.numerics.drift_model import TruncationLevel, step_drift
from sbm_lab.numerics.log_laplace import mass_integral
from sbm_lab.utils.rng import path_stream

Y0 = [(0.0, 1.0)]


def test_borel_tanner_pmf_sums_to_one():
    k = np.arange(1, 600)
    assert borel_tanner_pmf(0.5, k).sum() == pytest.approx(1.0, abs=1e-8)
    assert borel_tanner_pmf(0.5, 1) == pytest.approx(math.exp(-0.5))
    with pytest.raises(PreconditionError):
        borel_tanner_pmf(1.5, 1)


def test_total_progeny_histogram_fits_borel_tanner():
    rng = path_stream(1, 0)
    samples = np.array([total_progeny_sample(rng, 0.5) for _ in range(2000)])
    k = np.arange(1, 6)
    observed = np.append(np.bincount(samples, minlength=7)[1:6], np.sum(samples > 5))
    pmf = borel_tanner_pmf(0.5, k)
    expected = samples.size * np.append(pmf, 1.0 - pmf.sum())
    assert stats.chisquare(observed, expected).pvalue > 1e-3


@pytest.mark.slow
def test_total_progeny_matches_borel_tanner():
    rng = path_stream(0, 0)
    samples = np.array([total_progeny_sample(rng, 0.5) for _ in range(50_000)])
    k = np.arange(1, samples.max() + 1)
    empirical = np.bincount(samples, minlength=k[-1] + 1)[1:] / samples.size
    pmf = borel_tanner_pmf(0.5, k)
    assert 0.5 * np.abs(empirical - pmf).sum() < 0.02
    assert samples.mean() == pytest.approx(2.0, abs=4 * samples.std() / math.sqrt(samples.size))


def test_root_flow_integral_and_inverse(coarse_solver):
    root = RootFlow.compute(coarse_solver, Y0, 0.2)
    expected = mass_integral(Y0, 0.2, coarse_solver.dt, grid=coarse_solver.grid)
    assert root.integral(0.2) == pytest.approx(expected, rel=1e-12)
    t = 0.0731
    assert root.inverse(root.integral(t)) == pytest.approx(t, rel=1e-4)
    assert root.inverse(2 * expected) is None


def test_branching_tree_structure(coarse_solver):
    record = simulate_branching(Y0, 0.2, 2.0, coarse_solver.dt, 3, solver=coarse_solver)
    assert record.is_prefix_closed()
    births = dict(zip(record.labels, record.birth_times))
    assert all(births[label] >= births[label[:-1]] for label in record.labels if len(label) > 1)
    assert record.alive_count(0.0) == 1
    assert record.alive_count(0.2) == record.size


def test_no_births_without_rate(coarse_solver):
    record = simulate_branching(Y0, 0.2, 0.0, coarse_solver.dt, 0, solver=coarse_solver)
    assert record.size == 1


def test_first_generation_mean(coarse_solver):
    T, nu_bar = 0.1, 1.0
    records = simulate_branching_runs(Y0, T, nu_bar, 1, range(2000), solver=coarse_solver)
    means, stderr = generation_means(records, T, 2)
    expected = nu_bar * RootFlow.compute(coarse_solver, Y0, T).integral(T)
    assert means[0] == 1.0
    assert abs(means[1] - expected) <= 4 * stderr[1]


def test_runs_do_not_depend_on_chunking(coarse_solver):
    a = simulate_branching_runs(Y0, 0.1, 1.0, 5, range(10), solver=coarse_solver, chunk=10)
    b = simulate_branching_runs(Y0, 0.1, 1.0, 5, range(10), solver=coarse_solver, chunk=3)
    assert [r.birth_times for r in a] == [r.birth_times for r in b]


def test_small_horizon_hits_target(coarse_solver):
    K = coarse_solver.singular_profile.mass
    T0 = small_horizon(1.0, Y0, 0.5, solver=coarse_solver)
    root = RootFlow.compute(coarse_solver, Y0, 1.0)
    assert progeny_parameter(1.0, T0, root.integral(T0), K) == pytest.approx(0.5, abs=1e-6)


def test_generation_bound_below_half(coarse_solver):
    T0 = small_horizon(1.0, Y0, 0.5, solver=coarse_solver)
    records = simulate_branching_runs(Y0, T0, 1.0, 2, range(2000), solver=coarse_solver)
    rows = generation_bound_check(records, T0, 4)
    assert all(row["holds"] for row in rows)


def test_admissible_gamma():
    assert admissible_gamma(0.5) == pytest.approx(0.5 - 1 + math.log(2))
    assert admissible_gamma(1.0) == 0.0


@pytest.mark.parametrize("paths", [200, pytest.param(1000, marks=pytest.mark.slow)])
def test_coupling_has_no_violations(coarse_solver, paths):
    reports = coupled_runs(Y0, 0.2, TruncationLevel(10), 0, range(paths),
                           drift=step_drift(0.0, 1.0), solver=coarse_solver)
    assert len(reports) == paths
    assert sum(r.violations for r in reports) == 0
    assert any(r.dual_jump_times for r in reports)
