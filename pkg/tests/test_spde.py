"""
Tests for the SPDE scheme, its mass ledger and the field functionals.
"""
import math

import numpy as np
import pytest

from sbm_lab.core.errors import ConfigError, PreconditionError
from sbm_lab.numerics.drift_model import immigration_drift, step_drift
from sbm_lab.numerics.grid import Field
from sbm_lab.numerics.log_laplace import heat_evolve
from sbm_lab.numerics.spde import (
    SpdeParams,
    coupled_domination,
    cozero_laplace_proxy,
    cozero_measure,
    ctem_norm,
    laplace_functional,
    simulate_spde,
    simulate_spde_paths,
    zero_probability,
)


@pytest.fixture
def X0(coarse_grid):
    return Field.indicator(coarse_grid, -1.0, 1.0)


def params_for(grid, horizon=0.1, **kwargs):
    return SpdeParams(grid=grid, dt=0.25 * grid.dx ** 2, horizon=horizon, **kwargs)


def test_explicit_scheme_needs_small_dt(coarse_grid):
    with pytest.raises(ConfigError):
        SpdeParams(grid=coarse_grid, dt=coarse_grid.dx ** 2, horizon=0.1)


def test_zero_noise_reduces_to_heat(coarse_grid, X0):
    params = params_for(coarse_grid, horizon=0.25, noise_scale=0.0)
    path = simulate_spde(X0, params)
    heat = heat_evolve(X0, 0.25, params.step_size).values
    assert np.max(np.abs(path.final.values - heat)) / heat.max() < 0.02
    assert path.clipped_mass.sum() == 0.0


def test_ledger_is_exact_without_noise(coarse_grid, X0):
    params = params_for(coarse_grid, drift=immigration_drift(1.0), noise_scale=0.0)
    path = simulate_spde(X0, params)
    assert np.allclose(path.martingale(), X0.mass(), rtol=1e-12, atol=1e-12)
    assert path.drift_input.sum() == pytest.approx(
        1.0 * (coarse_grid.N - 2) * coarse_grid.dx * params.horizon, rel=1e-9)


def test_mass_martingale_has_constant_mean(coarse_grid, X0):
    batch = simulate_spde_paths(X0, params_for(coarse_grid), 400)
    martingale = batch.martingale()[:, -1]
    stderr = martingale.std(ddof=1) / math.sqrt(martingale.size)
    assert abs(martingale.mean() - X0.mass()) <= 4 * stderr


def test_paths_do_not_depend_on_chunking(coarse_grid, X0):
    params = params_for(coarse_grid, horizon=0.02, seed=3)
    a = simulate_spde_paths(X0, params, 12, chunk=12)
    b = simulate_spde_paths(X0, params, 12, chunk=5)
    assert np.array_equal(a.final, b.final)
    single = simulate_spde(X0, params, path_id=7)
    assert np.array_equal(single.final.values, a.final[7])


def test_states_stay_nonnegative_with_dirichlet_boundary(coarse_grid, X0):
    batch = simulate_spde_paths(X0, params_for(coarse_grid, horizon=0.05), 20)
    assert np.all(batch.final >= 0)
    assert np.all(batch.final[:, 0] == 0) and np.all(batch.final[:, -1] == 0)


def test_larger_drift_gives_more_mass(coarse_grid, X0):
    low = simulate_spde_paths(X0, params_for(coarse_grid, drift=step_drift(0.0, 1.0)), 50)
    high = simulate_spde_paths(X0, params_for(coarse_grid, drift=step_drift(1.0, 1.0)), 50)
    assert high.mass[:, -1].mean() > low.mass[:, -1].mean()


def test_coupled_domination_report(coarse_grid, X0):
    low = params_for(coarse_grid, horizon=0.05, drift=step_drift(0.5, 1.0))
    high = params_for(coarse_grid, horizon=0.05, drift=step_drift(1.0, 1.0))
    report = coupled_domination(X0, low, high, range(10))
    assert report["paths"] == 10
    assert report["node_steps"] == 10 * low.steps * coarse_grid.N
    assert 0.0 <= report["violation_fraction"] <= 1.0
    with pytest.raises(PreconditionError):
        coupled_domination(X0, low, params_for(coarse_grid, horizon=0.1), range(2))


def test_cozero_measure(coarse_grid, X0):
    assert cozero_measure(coarse_grid.zeros()) == 0.0
    assert abs(cozero_measure(X0) - 2.0) <= coarse_grid.dx + 1e-12
    assert cozero_measure(X0.scaled(0.5), eps=0.6) == 0.0


def test_cozero_proxy_increases_to_measure(X0):
    field = X0.scaled(0.01)
    proxies = [cozero_laplace_proxy(field, n) for n in (1, 10, 100, 1e4, 1e6)]
    assert all(b >= a for a, b in zip(proxies, proxies[1:]))
    assert proxies[-1] == pytest.approx(cozero_measure(field), rel=1e-6)


def test_ctem_norm(coarse_grid, X0):
    assert ctem_norm(X0, -1.0) == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        ctem_norm(X0, 0.0)


def test_zero_probability(coarse_grid):
    values = np.zeros((4, coarse_grid.N))
    values[:1, 40] = 1.0
    p, se = zero_probability(values, coarse_grid, 0.0)
    assert p == 0.75
    assert se == pytest.approx(math.sqrt(0.75 * 0.25 / 4))


def test_laplace_functional(coarse_grid, X0):
    assert laplace_functional(X0, [(0.0, 2.0)]) == pytest.approx(math.exp(-2.0))
    assert laplace_functional(coarse_grid.zeros(), [(0.0, 5.0)]) == 1.0
