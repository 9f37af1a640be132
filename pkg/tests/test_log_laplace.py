"""
Tests for the log-Laplace solver and the very singular profile.
"""
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from sbm_lab.core.errors import ConfigError, NumericalAbort, PreconditionError
from sbm_lab.numerics.grid import Field, Grid1D
from sbm_lab.numerics.log_laplace import (
    LogLaplaceSolver,
    SingularProfile,
    evolve,
    heat_evolve,
    heat_kernel,
    mass_integral,
    mass_trajectory,
    reaction_substep,
    very_singular_mass,
    very_singular_mass_integral,
    very_singular_profile,
    very_singular_solution,
)


@pytest.fixture(scope="module")
def profile():
    return very_singular_profile()


@pytest.mark.parametrize("v0", [0.0, 1.0, 2.0, 10.0])
@pytest.mark.parametrize("tau", [0.01, 0.1, 1.0])
def test_reaction_substep_is_exact(v0, tau):
    grid = Grid1D(1.0, 5)
    out = reaction_substep(Field(grid, [0.0, v0, v0, v0, 0.0]), tau)
    assert out.values[2] == pytest.approx(v0 / (1 + 0.5 * v0 * tau), abs=1e-12)


def test_heat_step_matches_kernel():
    grid = Grid1D(10.0, 2001)
    out = heat_evolve(Field.delta(grid, 0.0), 0.5, 1e-3)
    exact = heat_kernel(0.5, grid.nodes)
    assert np.max(np.abs(out.values - exact)) / exact.max() < 5e-3


def test_profile_solves_the_ode(profile):
    assert profile.residual < 1e-8
    assert 0 < profile.f0 < 2
    assert np.all(np.diff(profile.f) <= 1e-12)


def test_profile_residual_above_tolerance_aborts():
    with pytest.raises(NumericalAbort) as info:
        very_singular_profile(tol=1e-30)
    assert info.value.diagnostics["residual"] > 1e-30


def test_profile_tail_is_gaussian(profile):
    ratios = profile.tail_ratio(np.linspace(4.0, 6.0, 41))
    assert (ratios.max() - ratios.min()) / ratios.mean() < 0.01
    assert profile.tail_ratio(6.0) == pytest.approx(profile.tail_constant, rel=1e-6)


def test_profile_csv_keeps_constants(profile, tmp_path):
    loaded = SingularProfile.from_csv(profile.to_csv(tmp_path / "profile.csv"))
    assert loaded.f0 == profile.f0
    assert loaded.tail_constant == profile.tail_constant
    assert loaded.mass == pytest.approx(profile.mass, rel=1e-12)


def test_singular_mass_scaling(profile):
    K = profile.mass
    assert very_singular_mass(0.25, profile) == pytest.approx(2 * K)
    assert very_singular_mass_integral(0.25, profile) == pytest.approx(K)
    r = np.linspace(-30, 30, 60001)
    assert trapezoid(very_singular_solution(1.0, r, profile), r) == pytest.approx(K, rel=1e-6)


def test_self_similar_evolution(solver, profile):
    t0, step = 0.25, 0.25
    start = Field(solver.grid, solver.singular_values(0.0, t0))
    out = evolve(start, step, solver.dt)
    exact = solver.singular_values(0.0, t0 + step)
    window = np.abs(solver.grid.nodes) <= 3
    gap = np.max(np.abs(out.values - exact)[window]) / exact.max()
    assert gap < 0.01


def test_monotone_limit_below_singular_solution(solver):
    t = 0.5
    window = np.abs(solver.grid.nodes) <= 3
    W = solver.singular_values(0.0, t)
    previous = np.zeros(solver.grid.N)
    gaps = []
    for n in (1, 16, 256, 1024):
        V = evolve([(0.0, float(n))], t, solver.dt, grid=solver.grid).values
        assert np.all(V[window] >= previous[window] - 1e-12)
        previous = V
        gaps.append(np.max(np.abs(W - V)[window]) / W.max())
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05


def test_comparison_inequalities(coarse_grid):
    rng = np.random.default_rng(5)
    t, dt = 0.5, 5e-3
    for _ in range(5):
        mu = Field(coarse_grid, rng.uniform(0, 3, coarse_grid.N) * (np.abs(coarse_grid.nodes) < 2))
        nu = Field(coarse_grid, rng.uniform(0, 3, coarse_grid.N) * (np.abs(coarse_grid.nodes) < 2))
        v_mu, v_nu = evolve(mu, t, dt).values, evolve(nu, t, dt).values
        v_sum = evolve(mu + nu, t, dt).values
        assert np.all(v_mu <= heat_evolve(mu, t, dt).values + 1e-12)
        assert np.all(v_sum <= v_mu + v_nu + 1e-12)
        assert np.all(v_sum >= v_mu - 1e-12)


def test_mass_trajectory_nonincreasing(coarse_grid):
    times, masses = mass_trajectory([(0.0, 5.0)], 0.5, 5e-3, grid=coarse_grid)
    assert times[0] == 0.0 and times[-1] == pytest.approx(0.5)
    assert masses[0] == pytest.approx(5.0)
    assert np.all(np.diff(masses) <= 1e-12)
    assert 0 < mass_integral([(0.0, 5.0)], 0.5, 5e-3, grid=coarse_grid) < 2.5


def test_infinite_atom_warm_start(coarse_solver):
    values = coarse_solver.regularize([(0.0, math.inf)])
    assert np.allclose(values, coarse_solver.singular_values(0.0))
    assert values[0] == values[-1] == 0.0


def test_step_sizes_land_on_horizon(coarse_solver):
    sizes = coarse_solver.step_sizes(0.1)
    assert sum(sizes) == pytest.approx(0.1, abs=1e-12)
    assert sizes[0] == pytest.approx(coarse_solver.dt * 2.0 ** -coarse_solver.grading)


def test_solver_validation(coarse_grid):
    with pytest.raises(ConfigError):
        LogLaplaceSolver(grid=coarse_grid, dt=1e-3, theta=0.3)
    with pytest.raises(PreconditionError):
        evolve([(0.0, 1.0)], 0.1, 1e-3)
