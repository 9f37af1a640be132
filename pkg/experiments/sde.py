"""
SDE Experiment - scalar square-root diffusions with discontinuous drift
"""
import math
import logging
from typing import Any, Dict, List

import numpy as np
from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import ExperimentInput
from sbm_lab.numerics.scalar_sde import (
    SdePath,
    exact_half_bessel_square,
    nonexistence_demo,
    occupation_time_at_zero,
    same_law_comparison,
    two_solution_demo,
)
from sbm_lab.utils.experiment_decorator import experiment
from sbm_lab.utils.rng import Stream, path_stream

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "sde"


class SdeInput(ExperimentInput):
    """Input model for the scalar SDE demonstrations."""
    T: float = Field(default=1.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    x0: float = Field(default=0.0, ge=0)
    c_values: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.25, 0.4, 0.5])
    refinement_dts: List[float] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    bessel_paths: int = Field(default=100_000, ge=2, description="Exact 1/2 B_T^2 samples for the moment check")
    occupation_eps: List[float] = Field(default_factory=lambda: [0.0, 1e-4, 1e-3, 1e-2])


def bessel_moment_check(params: SdeInput) -> Dict[str, Any]:
    rng = path_stream(params.mc.seed, 0, Stream.SAMPLER)
    samples = np.array([exact_half_bessel_square(rng, [params.T])[0] for _ in range(params.bessel_paths)])
    mean, stderr = float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))
    expected = 0.5 * params.T
    return {"mean": mean, "stderr": stderr, "expected": expected,
            "pass": bool(abs(mean - expected) <= 3 * stderr)}


def occupation_sweep(params: SdeInput, run: RunContext) -> List[dict]:
    """Occupation time at zero of exactly sampled 1/2 B^2 paths for several thresholds."""
    rng = path_stream(params.mc.seed, 1, Stream.SAMPLER)
    steps = max(1, int(round(params.T / params.dt)))
    t_grid = params.dt * np.arange(1, steps + 1)
    paths = min(params.mc.paths, 1000)
    values = [SdePath(params.dt, np.concatenate([[0.0], exact_half_bessel_square(rng, t_grid)]))
              for _ in range(paths)]
    rows = []
    for eps in sorted(params.occupation_eps):
        occ = np.array([occupation_time_at_zero(p, eps) for p in values])
        rows.append({"eps": eps, "mean_occupation": float(occ.mean())})
    run.csv("occupation.csv", ["eps", "mean_occupation"], ((r["eps"], r["mean_occupation"]) for r in rows),
            {"paths": paths, "dt": params.dt})
    return rows


def _table(run: RunContext, name: str, rows: List[dict], meta: Dict[str, Any]):
    if rows:
        columns = list(rows[0])
        run.csv(name, columns, ([r[c] for c in columns] for r in rows), meta)


@experiment(
    name=EXPERIMENT_NAME,
    description="Two-solution, same-law and non-existence demonstrations for dx = h(x)dt + sqrt(x)dB",
    input_model=SdeInput,
    outputs=["two_solutions.csv", "same_law.csv", "nonexistence.csv", "occupation.csv"],
)
def run_sde(params: SdeInput, run: RunContext) -> Dict[str, Any]:
    mc = params.mc
    meta = {"T": params.T, "dt": params.dt, "paths": mc.paths}

    two = two_solution_demo(params.T, params.dt, mc.seed, mc.paths)
    _table(run, "two_solutions.csv", two, meta)

    same = same_law_comparison(params.c_values, params.x0, params.T, params.dt, mc.seed, mc.paths)
    _table(run, "same_law.csv", same, {**meta, "x0": params.x0})

    collapse = nonexistence_demo(params.refinement_dts, params.T, mc.seed, mc.paths)
    _table(run, "nonexistence.csv", collapse, {"T": params.T, "paths": mc.paths})

    return {
        "two_solutions": two,
        "same_law": same,
        "nonexistence": collapse,
        "occupation_sweep": occupation_sweep(params, run),
        "bessel_moment": bessel_moment_check(params),
    }
