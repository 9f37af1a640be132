"""
Duality Experiment - Monte Carlo checks of the duality identities
"""
import logging
from typing import Any, Dict, List, Literal, Optional

from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import (
    DriftConfig,
    ExperimentInput,
    GridConfig,
    InitialFieldConfig,
    PointMass,
    SolverConfig,
    StrictModel,
    atoms_of,
)
from sbm_lab.numerics.duality import (
    MonteCarloParams,
    duality_const_immigration,
    duality_full,
    duality_h0,
    extinction_sweep,
    level_sweep,
    warm_start_sweep,
)
from sbm_lab.utils.experiment_decorator import experiment

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "duality"


class ExtinctionConfig(StrictModel):
    x: float = 0.0
    t: float = Field(default=0.5, gt=0)
    a: float = Field(default=1.0, ge=0)
    masses: List[float] = Field(default_factory=lambda: [1, 4, 16, 64, 256])
    with_X0: bool = Field(default=False, description="Use X0 instead of the zero field")


class DualityInput(ExperimentInput):
    """Input model for the duality checks."""
    check: Literal["h0", "immigration", "full", "extinction"] = "h0"
    grid: GridConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    spde_dt: Optional[float] = Field(default=None, gt=0, description="SPDE time step; defaults to dx^2/4")
    X0: InitialFieldConfig = Field(default_factory=InitialFieldConfig)
    mu: List[PointMass] = Field(default_factory=lambda: [PointMass(x=0.0, mass=1.0)])
    thetas: List[float] = Field(default_factory=lambda: [1.0], description="mu is scaled by each theta")
    t: float = Field(default=0.25, gt=0)
    a: float = Field(default=1.0, ge=0, description="Immigration rate of the 'immigration' check")
    drift: DriftConfig = Field(default_factory=lambda: DriftConfig(preset="step", b0=0.0, b1=1.0, level=10))
    dual_paths: Optional[int] = Field(default=None, ge=2)
    levels: List[int] = Field(default_factory=list, description="Level sweep of the dual side")
    warm_start_eps: List[float] = Field(default_factory=list)
    bias_check: bool = True
    sigma: float = Field(default=3.0, gt=0)
    extinction: ExtinctionConfig = Field(default_factory=ExtinctionConfig)


def _mc(params: DualityInput, paths: Optional[int] = None) -> MonteCarloParams:
    mc = params.mc
    return MonteCarloParams(paths=paths or mc.paths, seed=mc.seed, workers=mc.workers, chunk=mc.chunk,
                            sigma=params.sigma)


def _rows_csv(run: RunContext, name: str, rows: List[dict], meta: Dict[str, Any]):
    if rows:
        columns = list(rows[0])
        run.csv(name, columns, ([r[c] for c in columns] for r in rows), meta)


@experiment(
    name=EXPERIMENT_NAME,
    description="SPDE Monte Carlo against the log-Laplace and dual sides of the duality",
    input_model=DualityInput,
    outputs=["report.json", "level_sweep.csv", "warm_start.csv", "extinction.csv"],
)
def run_duality(params: DualityInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    solver = params.solver.build(grid)
    X0 = params.X0.build(grid)
    spde_dt = params.spde_dt or 0.25 * grid.dx ** 2
    mu = atoms_of(params.mu)
    mc = _mc(params)
    summary: Dict[str, Any] = {"check": params.check}

    if params.check == "extinction":
        ext = params.extinction
        result = extinction_sweep(X0 if ext.with_X0 else None, ext.x, ext.t, ext.a, solver=solver,
                                  masses=ext.masses)
        _rows_csv(run, "extinction.csv", result["rows"], {"limit": result["limit"], "a": ext.a, "t": ext.t})
        summary.update({k: v for k, v in result.items() if k != "rows"})
        summary["pass"] = bool(result["monotone"] and abs(result["final_relative_gap"]) < 0.02)
        run.json("report.json", summary)
        return summary

    reports = []
    if params.check in ("h0", "immigration"):
        for theta in params.thetas:
            scaled = [(x, theta * m) for x, m in mu]
            if params.check == "h0":
                report = duality_h0(X0, scaled, params.t, mc, solver=solver, spde_dt=spde_dt,
                                    with_bias=params.bias_check)
            else:
                report = duality_const_immigration(X0, scaled, params.a, params.t, mc, solver=solver,
                                                   spde_dt=spde_dt, with_bias=params.bias_check)
            report.extra["theta"] = theta
            reports.append(report.to_dict())
    else:
        drift, level = params.drift.build()
        dual_mc = _mc(params, params.dual_paths)
        report = duality_full(X0, mu, drift, level, params.t, mc, solver=solver, spde_dt=spde_dt,
                              dual_mc=dual_mc, with_bias=params.bias_check)
        reports.append(report.to_dict())
        if params.levels:
            rows = level_sweep(X0, mu, drift, params.levels, params.t, dual_mc, solver=solver)
            _rows_csv(run, "level_sweep.csv", rows, {"t": params.t, "drift": drift.label})
            summary["level_sweep"] = rows
        if params.warm_start_eps:
            rows = warm_start_sweep(X0, mu, drift, params.warm_start_eps, params.t, dual_mc, solver=solver)
            _rows_csv(run, "warm_start.csv", rows, {"t": params.t, "drift": drift.label})
            summary["warm_start"] = rows

    summary["reports"] = reports
    summary["pass"] = all(r["pass"] for r in reports)
    run.json("report.json", summary)
    return summary
