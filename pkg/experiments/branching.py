"""
Branching Experiment - the particle system bounding the dual's jumps
"""
import logging
from typing import Any, Dict, List

import numpy as np
from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import (
    DriftConfig,
    ExperimentInput,
    GridConfig,
    PointMass,
    SolverConfig,
    StrictModel,
    atoms_of,
)
from sbm_lab.numerics.branching import (
    RootFlow,
    admissible_gamma,
    borel_tanner_pmf,
    coupled_runs,
    exponential_moment,
    generation_bound_check,
    generation_means,
    progeny_parameter,
    simulate_branching_runs,
    small_horizon,
    total_progeny_sample,
)
from sbm_lab.numerics.log_laplace import very_singular_mass_integral
from sbm_lab.utils.experiment_decorator import experiment
from sbm_lab.utils.rng import Stream, path_stream

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "branching"


class BorelTannerConfig(StrictModel):
    lam: float = Field(default=0.5, gt=0, lt=1)
    samples: int = Field(default=100_000, ge=1)


class CouplingConfig(StrictModel):
    paths: int = Field(default=1000, ge=0)
    drift: DriftConfig = Field(default_factory=lambda: DriftConfig(preset="step", b0=0.0, b1=1.0, level=10))


class BranchingInput(ExperimentInput):
    """Input model for the branching bound."""
    grid: GridConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    Y0: List[PointMass] = Field(default_factory=lambda: [PointMass()])
    nu_bar: float = Field(default=1.0, ge=0)
    horizon: float = Field(default=0.2, gt=0)
    max_generation: int = Field(default=6, ge=0)
    target_lambda: float = Field(default=0.5, gt=0, lt=1)
    borel_tanner: BorelTannerConfig = Field(default_factory=BorelTannerConfig)
    coupling: CouplingConfig = Field(default_factory=CouplingConfig)


def borel_tanner_check(cfg: BorelTannerConfig, seed: int, run: RunContext) -> Dict[str, Any]:
    rng = path_stream(seed, 0, Stream.SAMPLER)
    samples = np.array([total_progeny_sample(rng, cfg.lam) for _ in range(cfg.samples)])
    k = np.arange(1, samples.max() + 1)
    empirical = np.bincount(samples, minlength=k[-1] + 1)[1:] / samples.size
    pmf = borel_tanner_pmf(cfg.lam, k)
    tv = 0.5 * (np.abs(empirical - pmf).sum() + max(0.0, 1.0 - pmf.sum()))
    run.csv("borel_tanner.csv", ["k", "empirical", "pmf"], zip(k, empirical, pmf), {"lambda": cfg.lam})
    mean, stderr = float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))
    expected = 1.0 / (1.0 - cfg.lam)
    return {
        "lambda": cfg.lam,
        "samples": cfg.samples,
        "tv_distance": float(tv),
        "mean": mean,
        "mean_stderr": stderr,
        "pass": bool(tv < 0.02 and abs(mean - expected) <= 3 * stderr),
    }


@experiment(
    name=EXPERIMENT_NAME,
    description="Branching upper bound: progeny law, generation means, exponential moments and the coupling",
    input_model=BranchingInput,
    outputs=["borel_tanner.csv", "generations.csv", "alive.csv", "coupling.jsonl"],
)
def run_branching(params: BranchingInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    solver = params.solver.build(grid)
    mc = params.mc
    Y0 = atoms_of(params.Y0)
    T = params.horizon
    K = solver.singular_profile.mass

    root = RootFlow.compute(solver, Y0, T)
    lam = progeny_parameter(params.nu_bar, T, root.integral(T), K)
    T0 = small_horizon(params.nu_bar, Y0, params.target_lambda, solver=solver, t_max=max(T, 1.0))
    summary: Dict[str, Any] = {"K": K, "lambda_T": lam, "T0": T0, "nu_bar": params.nu_bar}
    logger.info(f"lambda({T}) = {lam:.4f}; lambda <= {params.target_lambda} up to T0 = {T0:.4g}")

    summary["borel_tanner"] = borel_tanner_check(params.borel_tanner, mc.seed, run)

    records = simulate_branching_runs(Y0, T, params.nu_bar, mc.seed, range(mc.paths), solver=solver,
                                      chunk=mc.chunk, workers=mc.workers)
    means, stderr = generation_means(records, T, params.max_generation)
    ratio = params.nu_bar * very_singular_mass_integral(T, solver.singular_profile)
    rows = [(i, means[i], stderr[i], means[i - 1] * ratio if i else 1.0) for i in range(len(means))]
    run.csv("generations.csv", ["generation", "mean", "stderr", "recursive_bound"], rows, {"T": T})
    summary["generation_recursion"] = bool(all(
        means[i] - 3 * stderr[i] <= means[i - 1] * ratio for i in range(1, len(means))))
    if lam <= 0.5:
        summary["generation_bound"] = generation_bound_check(records, T, params.max_generation)

    times = np.linspace(0.0, T, 21)
    alive = np.mean([r.alive_trajectory(times) for r in records], axis=0)
    run.csv("alive.csv", ["t", "mean_alive"], zip(times, alive))
    summary["mean_alive_T"] = float(alive[-1])
    if 0 < lam < 1:
        summary["exponential_moment"] = exponential_moment(records, admissible_gamma(lam))

    if params.coupling.paths:
        drift, level = params.coupling.drift.build()
        reports = coupled_runs(Y0, T, level, mc.seed, range(params.coupling.paths), drift=drift,
                               solver=solver, chunk=max(1, mc.chunk // 8), workers=mc.workers)
        run.jsonl("coupling.jsonl", (r.to_dict() for r in reports), {"level": str(level)})
        summary["coupling"] = {
            "paths": len(reports),
            "nu_bar": drift.total_rate(level),
            "gap_violations": sum(r.gap_violations for r in reports),
            "mass_violations": sum(r.mass_violations for r in reports),
            "pass": all(r.violations == 0 for r in reports),
        }
    return summary
