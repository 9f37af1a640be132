"""
SPDE Experiment - mass balance, deterministic reduction and coupled domination
"""
import math
import logging
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import DriftConfig, ExperimentInput, GridConfig, InitialFieldConfig, StrictModel
from sbm_lab.numerics.drift_model import step_drift
from sbm_lab.numerics.log_laplace import heat_evolve
from sbm_lab.numerics.spde import SpdeParams, coupled_domination, simulate_spde, simulate_spde_paths
from sbm_lab.utils.experiment_decorator import experiment

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "spde"


class DominationConfig(StrictModel):
    """Coupled runs of h_{c,1} against h_{1,1}."""
    paths: int = Field(default=100, ge=0)
    c: float = Field(default=0.5, ge=0, le=1)


class SpdeInput(ExperimentInput):
    """Input model for SPDE simulation."""
    grid: GridConfig
    dt: Optional[float] = Field(default=None, gt=0, description="Time step; defaults to dx^2/4")
    horizon: float = Field(default=0.25, gt=0)
    X0: InitialFieldConfig = Field(default_factory=InitialFieldConfig)
    drift: DriftConfig = Field(default_factory=lambda: DriftConfig(preset="zero"))
    zero_threshold: float = Field(default=0.0, ge=0)
    check_times: List[float] = Field(default_factory=lambda: [0.1, 0.25])
    deterministic_check: bool = True
    domination: DominationConfig = Field(default_factory=DominationConfig)
    dump_final: int = Field(default=0, ge=0, description="Paths whose final state goes to final.csv")


def spde_params(params: SpdeInput, grid, drift, level, **extra) -> SpdeParams:
    dt = params.dt or 0.25 * grid.dx ** 2
    return SpdeParams(grid=grid, dt=dt, horizon=params.horizon, drift=drift, level=level,
                      zero_threshold=params.zero_threshold, seed=params.mc.seed, **extra)


def _constant_rate(drift) -> Optional[float]:
    if not drift.has_measures and drift.b0 == drift.b1:
        return drift.b1
    return None


@experiment(
    name=EXPERIMENT_NAME,
    description="SPDE mass martingale, immigration growth, zero-noise reduction and drift domination",
    input_model=SpdeInput,
    outputs=["mass.csv", "ledger.csv", "domination.json"],
)
def run_spde(params: SpdeInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    X0 = params.X0.build(grid)
    drift, level = params.drift.build()
    sp = spde_params(params, grid, drift, None if level.is_infinite else level)
    mc = params.mc
    m0 = X0.mass()

    batch = simulate_spde_paths(X0, sp, mc.paths, chunk=mc.chunk, workers=mc.workers)
    steps = sp.steps
    times = sp.step_size * np.arange(steps + 1)
    martingale = batch.martingale()
    rate = _constant_rate(drift)
    interior_length = (grid.N - 2) * grid.dx

    rows, checks = [], []
    for t in params.check_times:
        m = min(int(round(t / sp.step_size)), steps)
        mass = batch.mass[:, m]
        mean, se = float(mass.mean()), float(mass.std(ddof=1) / math.sqrt(mass.size)) if mass.size > 1 else 0.0
        mart = martingale[:, m]
        mart_mean = float(mart.mean())
        mart_se = float(mart.std(ddof=1) / math.sqrt(mart.size)) if mart.size > 1 else 0.0
        expected = m0 + rate * interior_length * times[m] if rate is not None else math.nan
        # boundary outflow and clipping move the mean off the closed form
        leakage = float(abs(batch.boundary_flux[:, :m].sum(axis=1).mean())
                        + batch.clipped_mass[:, :m].sum(axis=1).mean())
        rows.append((times[m], mean, se, expected, mart_mean, mart_se))
        checks.append({
            "t": float(times[m]),
            "mean_mass": mean,
            "stderr": se,
            "expected": expected,
            "leakage": leakage,
            "mass_pass": bool(abs(mean - expected) <= 3 * se + leakage + 1e-12) if rate is not None else None,
            "martingale_pass": bool(abs(mart_mean - m0) <= 3 * mart_se + 1e-12),
        })
    run.csv("mass.csv", ["t", "mean_mass", "stderr", "expected", "martingale_mean", "martingale_stderr"],
            rows, {"initial_mass": m0, "drift": drift.label})

    run.csv("ledger.csv", ["t", "mean_mass", "mean_clipped", "mean_flux", "mean_drift_input"],
            zip(times, batch.mass.mean(axis=0),
                np.concatenate([[0.0], np.cumsum(batch.clipped_mass.mean(axis=0))]),
                np.concatenate([[0.0], np.cumsum(batch.boundary_flux.mean(axis=0))]),
                np.concatenate([[0.0], np.cumsum(batch.drift_input.mean(axis=0))])))

    if params.dump_final:
        count = min(params.dump_final, mc.paths)
        run.csv("final.csv", ["x"] + [f"path_{i}" for i in range(count)],
                (row for row in np.column_stack([grid.nodes, batch.final[:count].T])))

    summary: Dict[str, Any] = {
        "drift": drift.to_dict(),
        "dt": sp.step_size,
        "steps": steps,
        "initial_mass": m0,
        "mass_checks": checks,
        "clipped_share": float(batch.clipped_mass.sum() / max(batch.mass[:, 1:].sum(), 1e-300)),
        "mean_zero_occupation": float(batch.zero_occupation.mean()),
    }

    if params.deterministic_check:
        quiet = simulate_spde(X0, spde_params(params, grid, step_drift(0.0, 0.0), None, noise_scale=0.0))
        heat = heat_evolve(X0, params.horizon, sp.step_size).values
        gap = float(np.max(np.abs(quiet.final.values - heat)) / max(np.max(heat), 1e-300))
        summary["zero_noise_vs_heat"] = gap

    if params.domination.paths:
        low = spde_params(params, grid, step_drift(params.domination.c, 1.0), None)
        high = spde_params(params, grid, step_drift(1.0, 1.0), None)
        report = coupled_domination(X0, low, high, range(params.domination.paths))
        run.json("domination.json", report)
        summary["domination"] = report
    return summary
