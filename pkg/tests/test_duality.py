"""
Tests for the duality reports and extinction probabilities.
"""
import math

import pytest

from sbm_lab.core.errors import PreconditionError
from sbm_lab.numerics.drift_model import INFINITE_LEVEL, DriftSpec, MeasureSpec, TruncationLevel, step_drift
from sbm_lab.numerics.grid import Field
from sbm_lab.numerics.duality import (
    DualityReport,
    MonteCarloParams,
    duality_const_immigration,
    duality_full,
    duality_h0,
    extinction_probability,
    extinction_sweep,
    level_sweep,
    log_laplace_functional,
)
from sbm_lab.numerics.log_laplace import very_singular_profile


def test_monte_carlo_params_validation():
    with pytest.raises(PreconditionError):
        MonteCarloParams(paths=1)
    with pytest.raises(PreconditionError):
        MonteCarloParams(paths=10, chunk=0)
    chunks = MonteCarloParams(paths=10, chunk=4).path_chunks()
    assert [list(c) for c in chunks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]


def test_report_tolerance():
    report = DualityReport("check", lhs=0.50, lhs_stderr=0.03, rhs=0.45, rhs_stderr=0.04, bias_budget=0.01)
    assert report.tolerance == pytest.approx(3 * 0.05 + 0.01)
    assert report.passed
    assert report.to_dict()["pass"] is True
    tight = DualityReport("check", lhs=0.50, lhs_stderr=0.001, rhs=0.45, rhs_stderr=0.0, bias_budget=0.0)
    assert not tight.passed


def test_zero_measure_gives_one(coarse_grid, coarse_solver):
    X0 = Field.indicator(coarse_grid, -1.0, 1.0)
    assert log_laplace_functional(X0, [(0.0, 0.0)], 0.1, 1.0, coarse_solver) == pytest.approx(1.0)


def test_extinction_without_initial_mass(coarse_solver):
    K = very_singular_profile().mass
    t, a = 0.25, 1.0
    assert extinction_probability(None, 0.0, t, a, solver=coarse_solver) == pytest.approx(
        math.exp(-a * 2 * K * math.sqrt(t)))
    assert extinction_probability(None, 0.0, t, 0.0, solver=coarse_solver) == 1.0


def test_extinction_decreases_with_initial_mass(coarse_grid, coarse_solver):
    bare = extinction_probability(None, 0.0, 0.25, 1.0, solver=coarse_solver)
    X0 = Field.indicator(coarse_grid, -1.0, 1.0)
    loaded = extinction_probability(X0, 0.0, 0.25, 1.0, solver=coarse_solver)
    assert 0 < loaded < bare
    with pytest.raises(PreconditionError):
        extinction_probability(None, 0.0, 0.0, 1.0, solver=coarse_solver)


def test_extinction_sweep_is_monotone(coarse_solver):
    result = extinction_sweep(None, 0.0, 0.25, 1.0, solver=coarse_solver, masses=[1, 4, 16, 64])
    assert result["monotone"]
    assert [r["m"] for r in result["rows"]] == [1, 4, 16, 64]
    assert all(0 < r["value"] <= 1 for r in result["rows"])


def test_duality_without_drift(coarse_grid, coarse_solver):
    X0 = Field.indicator(coarse_grid, -1.0, 1.0)
    mc = MonteCarloParams(paths=500, seed=3, chunk=128)
    report = duality_h0(X0, [(0.0, 1.0)], 0.1, mc, solver=coarse_solver,
                        spde_dt=0.25 * coarse_grid.dx ** 2, with_bias=True)
    assert report.extra["in_unit_interval"]
    assert report.passed, report.to_dict()


def test_duality_rejects_mismatched_grids(fine_grid, coarse_solver):
    X0 = Field.indicator(fine_grid, -1.0, 1.0)
    with pytest.raises(PreconditionError):
        duality_h0(X0, [(0.0, 1.0)], 0.1, MonteCarloParams(paths=4), solver=coarse_solver, spde_dt=1e-3)


@pytest.fixture
def bump(coarse_grid):
    return Field.indicator(coarse_grid, -1.0, 1.0)


def test_duality_with_constant_immigration(bump, coarse_grid, coarse_solver):
    mc = MonteCarloParams(paths=1000, seed=4, chunk=128)
    report = duality_const_immigration(bump, [(0.0, 1.0)], 1.0, 0.1, mc, solver=coarse_solver,
                                       spde_dt=0.25 * coarse_grid.dx ** 2, with_bias=True)
    assert report.extra["a"] == 1.0
    assert report.rhs < log_laplace_functional(bump, [(0.0, 1.0)], 0.1, 0.0, coarse_solver)
    assert report.passed, report.to_dict()


@pytest.mark.parametrize("drift,level,signed", [
    (step_drift(0.0, 1.0), TruncationLevel(10), False),
    (step_drift(1.0, 0.5), TruncationLevel(40), True),
    (DriftSpec(nu2=MeasureSpec(atoms=((1.0, 2.0),)), label="nu2-atom"), INFINITE_LEVEL, True),
])
def test_signed_duality_two_sided(bump, coarse_grid, coarse_solver, drift, level, signed):
    mc = MonteCarloParams(paths=1500, seed=5, chunk=256)
    lhs_level = None if level.is_infinite else level
    report = duality_full(bump, [(0.0, 1.0)], drift, level, 0.1, mc, solver=coarse_solver,
                          spde_dt=0.25 * coarse_grid.dx ** 2, lhs_level=lhs_level, with_bias=True)
    assert not report.extra["variance_flag"]
    if signed:
        # type-2 jumps flip the sign of the dual functional
        assert report.extra["p_odd"] > 0
    else:
        assert report.extra["p_odd"] == 0
    assert report.passed, report.to_dict()


def test_level_sweep_differences_shrink(bump, coarse_solver):
    mc = MonteCarloParams(paths=400, seed=6, chunk=128)
    rows = level_sweep(bump, [(0.0, 1.0)], step_drift(0.0, 1.0), [32, 2, 8], 0.1, mc, solver=coarse_solver)
    assert [r["level"] for r in rows] == [2, 8, 32]
    assert math.isnan(rows[-1]["cauchy"]) and math.isnan(rows[-1]["cauchy_stderr"])
    assert rows[1]["cauchy"] <= rows[0]["cauchy"] + 3 * rows[1]["cauchy_stderr"]
