"""
Cozero Experiment - size of {x : X_t(x) > 0} and its stability under domain doubling
"""
import logging
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import (
    DriftConfig,
    ExperimentInput,
    GridConfig,
    InitialFieldConfig,
    SolverConfig,
)
from sbm_lab.numerics.duality import extinction_probability
from sbm_lab.numerics.grid import Field as GridField, Grid1D
from sbm_lab.numerics.spde import (
    SpdeBatch,
    SpdeParams,
    cozero_laplace_proxy,
    cozero_measure,
    ctem_norm,
    simulate_spde_paths,
    zero_probability,
)
from sbm_lab.utils.experiment_decorator import experiment

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "cozero"

MEDIAN_SHIFT_LIMIT = 0.05


class CozeroInput(ExperimentInput):
    """Input model for the cozero-set study."""
    grid: GridConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    dt: Optional[float] = Field(default=None, gt=0, description="SPDE time step; defaults to dx^2/4")
    t: float = Field(default=0.1, gt=0)
    X0: InitialFieldConfig = Field(default_factory=InitialFieldConfig)
    drift: DriftConfig = Field(default_factory=lambda: DriftConfig(preset="step", b0=0.0, b1=1.0))
    eps: float = Field(default=0.0, ge=0, description="Threshold of the cozero measure")
    proxy_n: List[float] = Field(default_factory=lambda: [1, 10, 100, 1000])
    ctem_lambda: float = Field(default=-1.0, lt=0)
    eval_points: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0])
    drift_bound: Optional[float] = Field(default=1.0, ge=0,
                                         description="Constant a with h <= a, for the extinction lower bound")


def doubled(grid: Grid1D) -> Grid1D:
    """Same spacing on [-2L, 2L]."""
    return Grid1D(2 * grid.L, 2 * (grid.N - 1) + 1, grid.boundary)


def run_on(params: CozeroInput, grid: Grid1D) -> SpdeBatch:
    drift, level = params.drift.build()
    X0 = params.X0.build(grid)
    mc = params.mc
    sp = SpdeParams(grid=grid, dt=params.dt or 0.25 * grid.dx ** 2, horizon=params.t, drift=drift,
                    level=level, seed=mc.seed)
    return simulate_spde_paths(X0, sp, mc.paths, chunk=mc.chunk, workers=mc.workers)


def measures(batch: SpdeBatch, eps: float) -> np.ndarray:
    grid = batch.params.grid
    return np.array([cozero_measure(GridField(grid, row), eps) for row in batch.final])


@experiment(
    name=EXPERIMENT_NAME,
    description="Cozero measure at time t, Laplace proxies, zero probabilities and domain-doubling stability",
    input_model=CozeroInput,
    outputs=["cozero.csv", "proxy.csv", "zero_probability.csv"],
)
def run_cozero(params: CozeroInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    wide = doubled(grid)

    batch = run_on(params, grid)
    wide_batch = run_on(params, wide)
    small, large = measures(batch, params.eps), measures(wide_batch, params.eps)
    run.csv("cozero.csv", ["path", "L", "doubled_L"], zip(range(small.size), small, large),
            {"t": params.t, "eps": params.eps, "L": grid.L})

    median, wide_median = float(np.median(small)), float(np.median(large))
    shift = abs(wide_median - median) / median if median > 0 else (0.0 if wide_median == 0 else np.inf)
    logger.info(f"Median cozero measure {median:.4g} on L={grid.L}, {wide_median:.4g} on L={wide.L}")

    proxy_rows = []
    for n in sorted(params.proxy_n):
        proxy = np.array([cozero_laplace_proxy(GridField(grid, row), n) for row in batch.final])
        proxy_rows.append((n, float(proxy.mean())))
    proxy_rows.append((np.inf, float(measures(batch, 0.0).mean())))
    run.csv("proxy.csv", ["n", "mean_proxy"], proxy_rows)
    proxies = [v for _, v in proxy_rows]

    solver = params.solver.build(grid)
    X0 = params.X0.build(grid)
    zero_rows = []
    for x in params.eval_points:
        p, se = zero_probability(batch.final, grid, x)
        bound = (extinction_probability(X0, x, params.t, params.drift_bound, solver=solver)
                 if params.drift_bound is not None else None)
        zero_rows.append({"x": x, "p_zero": p, "stderr": se, "lower_bound": bound,
                          "pass": None if bound is None else bool(p + 3 * se >= bound)})
    run.csv("zero_probability.csv", ["x", "p_zero", "stderr", "lower_bound"],
            ((r["x"], r["p_zero"], r["stderr"], r["lower_bound"]) for r in zero_rows))

    ctem = np.array([ctem_norm(GridField(grid, row), params.ctem_lambda) for row in batch.final])
    return {
        "t": params.t,
        "median": median,
        "doubled_median": wide_median,
        "median_shift": float(shift),
        "stable": bool(shift < MEDIAN_SHIFT_LIMIT),
        "proxy_monotone": bool(all(a <= b + 1e-12 for a, b in zip(proxies, proxies[1:]))),
        "zero_probability": zero_rows,
        "mean_ctem_norm": float(ctem.mean()),
    }
