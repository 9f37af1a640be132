"""
Tests for the scalar square-root SDE demonstrations.
"""
import numpy as np
import pytest

from sbm_lab.core.errors import PreconditionError
from sbm_lab.numerics.drift_model import step_drift
from sbm_lab.numerics.scalar_sde import (
    ESCAPE,
    TIE,
    SdePath,
    exact_half_bessel_square,
    half_bessel_square_law,
    nonexistence_demo,
    occupation_time_at_zero,
    same_law_comparison,
    simulate_sde,
    simulate_sde_batch,
    two_solution_demo,
)
from sbm_lab.utils.rng import path_stream


def test_tie_policy_stays_at_zero():
    batch = simulate_sde_batch(step_drift(0.0, 0.5), 0.0, 0.01, 1.0, 0, 200, zero_policy=TIE)
    assert np.all(batch.finals == 0.0)
    assert np.allclose(batch.occupation, 1.0)


def test_escape_policy_follows_half_bessel_square():
    T = 1.0
    batch = simulate_sde_batch(step_drift(0.0, 0.5), 0.0, 0.01, T, 0, 4000, zero_policy=ESCAPE)
    assert batch.finals.mean() == pytest.approx(0.5 * T, abs=0.05)
    assert np.mean(batch.finals == 0.0) < 0.05


def test_single_path_matches_batch():
    drift = step_drift(0.25, 0.5)
    path = simulate_sde(drift, 0.1, 0.01, 0.5, 7, path_id=3)
    batch = simulate_sde_batch(drift, 0.1, 0.01, 0.5, 7, 5)
    assert path.values[-1] == pytest.approx(batch.finals[3], rel=1e-12)
    assert path.horizon == pytest.approx(0.5)


def test_unknown_zero_policy():
    with pytest.raises(PreconditionError):
        simulate_sde(step_drift(0.0, 0.5), 0.0, 0.01, 0.1, 0, zero_policy="bounce")


def test_exact_sampler_law():
    rng = path_stream(1, 0)
    samples = np.array([exact_half_bessel_square(rng, [0.5, 2.0])[1] for _ in range(20_000)])
    assert samples.mean() == pytest.approx(1.0, abs=0.05)
    assert half_bessel_square_law(2.0).mean() == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        exact_half_bessel_square(rng, [1.0, 0.5])


def test_occupation_time_at_zero():
    path = SdePath(dt=0.1, values=np.array([0.0, 0.0, 0.2, 0.0, 0.5]))
    assert occupation_time_at_zero(path) == pytest.approx(0.3)
    assert occupation_time_at_zero(path, eps=0.3) == pytest.approx(0.4)


def test_two_solution_demo_separates_policies():
    rows = {row["policy"]: row for row in two_solution_demo(1.0, 0.01, 0, 1000)}
    assert rows[TIE]["zero_fraction"] == 1.0
    assert rows[ESCAPE]["ks_to_exact"] < rows[TIE]["ks_to_exact"]


def test_same_law_for_matching_drift():
    rows = same_law_comparison([0.5], 0.2, 0.5, 0.01, 0, 1000)
    assert rows[0]["c"] == 0.5
    assert rows[0]["p_value"] > 1e-3
    with pytest.raises(PreconditionError):
        same_law_comparison([0.7], 0.2, 0.5, 0.01, 0, 10)


def test_occupation_shrinks_under_refinement():
    rows = nonexistence_demo([0.04, 0.0025], 1.0, 0, 1000)
    assert rows[1]["mean_occupation_at_zero"] < rows[0]["mean_occupation_at_zero"]
