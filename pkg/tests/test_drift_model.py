"""
Tests for drift evaluation, dual parameters and jump samplers.
"""
import math

import numpy as np
import pytest

from sbm_lab.core.errors import ConfigError, PreconditionError
from sbm_lab.core.schemas import DriftConfig
from sbm_lab.numerics.drift_model import (
    INFINITE_LEVEL,
    DriftSpec,
    MeasureSpec,
    TruncationLevel,
    derive_params,
    eval_drift,
    eval_drift_dual_form,
    eval_drift_truncated,
    holder_drift,
    reconstruct_h_infinity,
    sample_jump_height,
    sample_jump_mark,
    step_drift,
    tabulate_drift,
)
from sbm_lab.utils.rng import path_stream

XS = np.array([0.0, 1e-6, 0.01, 0.5, 1.0, 3.0, 10.0])


def mixed_drift():
    nu1 = MeasureSpec(atoms=((1.0, 0.3), (5.0, 0.2)), breakpoints=(2.0, 3.0), values=(0.25,))
    nu2 = MeasureSpec(atoms=((0.5, 0.4),))
    return DriftSpec(nu1=nu1, nu2=nu2, b0=0.5, b1=0.2)


def test_step_drift_values():
    h = step_drift(0.0, 1.0)
    assert eval_drift(0.0, h) == 0.0
    assert eval_drift(1e-9, h) == 1.0
    assert np.allclose(eval_drift(XS, h), np.where(XS == 0, 0.0, 1.0))


def test_zero_threshold_counts_small_values_as_tie():
    h = step_drift(0.0, 1.0)
    values = eval_drift(np.array([0.0, 1e-4, 1e-2]), h, zero_threshold=1e-3)
    assert list(values) == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("b0,b1,expected", [
    (0.0, 1.0, (1.0, 0.0, 0.0)),
    (1.0, 0.0, (0.0, 1.0, -1.0)),
    (0.5, 0.5, (0.0, 0.0, 0.5)),
    (0.4, 1.0, (0.8, 0.2, 0.0)),
    (1.0, -0.5, (0.0, 1.5, -2.0)),
    (0.0, -1.0, (0.0, 1.0, -2.0)),
])
def test_derive_params_without_measures(b0, b1, expected):
    assert derive_params(b0, b1, MeasureSpec(), MeasureSpec()) == pytest.approx(expected)


def test_inadmissible_drift_rejected():
    nu1 = MeasureSpec(atoms=((1.0, 2.0),))
    with pytest.raises(PreconditionError):
        DriftSpec(nu1=nu1, b0=1.0, b1=1.0)


def test_negative_b0_allowed_only_above_b1():
    nu2 = MeasureSpec(atoms=((1.0, 1.0),))
    spec = DriftSpec(nu2=nu2, b0=-0.5, b1=-1.0)
    assert (spec.d1, spec.d2, spec.a) == pytest.approx((0.0, 0.5, -2.5))
    assert spec.d1 >= 0 and spec.d2 >= 0
    # h(0) = 1 - 0.5 stays nonnegative, but b0 < b1 would need d2 = b0/2 < 0
    with pytest.raises(PreconditionError):
        DriftSpec(nu2=nu2, b0=-0.5, b1=0.0)


@pytest.mark.parametrize("spec", [step_drift(0.0, 1.0), step_drift(1.0, 0.0), step_drift(0.3, 0.3),
                                  mixed_drift()], ids=["h01", "h10", "const", "mixed"])
def test_dual_form_matches_drift(spec):
    assert np.allclose(eval_drift_dual_form(XS, spec), eval_drift(XS, spec), atol=1e-12)


@pytest.mark.parametrize("spec", [step_drift(0.0, 1.0), step_drift(1.0, 0.0), mixed_drift()],
                         ids=["h01", "h10", "mixed"])
def test_boundary_part_reconstructed(spec):
    expected = np.where(XS == 0, spec.b0, spec.b1)
    assert np.allclose(reconstruct_h_infinity(XS, spec), expected, atol=1e-12)


def test_truncated_drift_converges():
    spec = mixed_drift()
    x = np.array([0.0, 0.05, 0.5, 2.0])
    gaps = [np.max(np.abs(eval_drift_truncated(x[1:], spec, n) - eval_drift(x[1:], spec)))
            for n in (5, 20, 80, 320)]
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.02
    assert eval_drift_truncated(0.0, spec, 1000) == pytest.approx(eval_drift(0.0, spec), abs=1e-9)


def test_truncated_drift_needs_finite_level():
    with pytest.raises(PreconditionError):
        eval_drift_truncated(1.0, step_drift(0.0, 1.0), INFINITE_LEVEL)


def test_negative_argument_rejected():
    with pytest.raises(PreconditionError):
        eval_drift(-1.0, step_drift(0.0, 1.0))


def test_measure_laplace_of_density():
    nu = MeasureSpec(breakpoints=(0.0, 2.0), values=(0.5,))
    x = 0.7
    expected = 0.5 * (1 - math.exp(-2 * x)) / x
    assert nu.laplace(x) == pytest.approx(expected, rel=1e-12)
    assert nu.laplace(0.0) == pytest.approx(1.0)


def test_restrict_cuts_density_and_atoms():
    nu = MeasureSpec(atoms=((1.0, 1.0), (4.0, 1.0)), breakpoints=(0.0, 2.0, 6.0), values=(1.0, 0.5))
    cut = nu.restrict(3.0)
    assert cut.total_mass() == pytest.approx(1.0 + 2.0 + 0.5)


def test_measure_sampler_matches_cdf():
    nu = MeasureSpec(atoms=((1.0, 0.5),), breakpoints=(2.0, 4.0), values=(0.25,))
    rng = path_stream(3, 0)
    draws = np.array([nu.sample(rng) for _ in range(20000)])
    assert np.mean(draws == 1.0) == pytest.approx(0.5, abs=0.02)
    assert np.all((draws == 1.0) | ((draws > 2.0) & (draws <= 4.0)))
    assert np.mean(draws <= 3.0) == pytest.approx(nu.cdf(3.0), abs=0.02)


def test_jump_mark_and_height_at_finite_level():
    spec = step_drift(0.4, 1.0)   # d1 = 0.8, d2 = 0.2
    level = TruncationLevel(10)
    rng = path_stream(1, 0)
    marks = np.array([sample_jump_mark(rng, spec, level) for _ in range(20000)])
    assert np.mean(marks == 1) == pytest.approx(0.8, abs=0.02)
    assert sample_jump_height(rng, 1, spec, level) == 10.0
    assert math.isinf(sample_jump_height(rng, 2, spec, INFINITE_LEVEL))


def test_total_rate():
    spec = mixed_drift()
    assert spec.total_rate() == pytest.approx(spec.nu1.total_mass() + spec.nu2.total_mass()
                                              + spec.d1 + spec.d2)


def test_holder_drift_vanishes_at_zero():
    h = holder_drift(0.5, lam_max=1e4, bins=400)
    assert eval_drift(0.0, h) == pytest.approx(0.0, abs=1e-9)
    small = eval_drift(np.array([1e-3, 4e-3]), h)
    # alpha = 1/2: quadrupling x roughly doubles h
    assert small[1] / small[0] == pytest.approx(2.0, rel=0.1)


def test_tabulated_drift_agrees():
    spec = holder_drift(0.5, lam_max=1e3, bins=200)
    table = tabulate_drift(spec, x_max=20.0)
    x = np.array([0.0, 1e-3, 0.3, 5.0, 25.0])
    assert np.allclose(table(x), eval_drift(x, spec), rtol=1e-3, atol=1e-4)


def test_drift_config_presets():
    spec, level = DriftConfig(preset="immigration", a=2.0).build()
    assert spec.a == pytest.approx(2.0) and level.is_infinite
    spec, level = DriftConfig(preset="step", b0=0.0, b1=1.0, level=10).build()
    assert spec.d1 == 1.0 and level.n == 10
    _, level = DriftConfig(preset="step", b1=1.0, level="inf").build()
    assert level.is_infinite


def test_drift_config_maps_inadmissible_to_config_error():
    cfg = DriftConfig(b0=0.0, b1=0.0, nu1={"atoms": [{"lam": 1.0, "weight": 1.0}]})
    with pytest.raises(ConfigError) as info:
        cfg.build()
    assert info.value.field_path == "drift"


def test_drift_config_accepts_negative_boundary_values():
    spec, _ = DriftConfig(preset="step", b0=1.0, b1=-0.5).build()
    assert (spec.d1, spec.d2, spec.a) == pytest.approx((0.0, 1.5, -2.0))
    spec, _ = DriftConfig(b0=-0.5, b1=-1.0, nu2={"atoms": [{"lam": 1.0, "weight": 1.0}]}).build()
    assert (spec.d1, spec.d2, spec.a) == pytest.approx((0.0, 0.5, -2.5))


def test_drift_config_rejects_negative_b0_below_b1():
    cfg = DriftConfig(b0=-0.5, b1=0.0, nu2={"atoms": [{"lam": 1.0, "weight": 1.0}]})
    with pytest.raises(ConfigError) as info:
        cfg.build()
    assert info.value.field_path == "drift"
