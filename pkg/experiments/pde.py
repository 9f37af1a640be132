"""
PDE Experiment - checks of the log-Laplace solver against closed forms
"""
import logging
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import Field

from sbm_lab.core.run_context import RunContext
from sbm_lab.core.schemas import ExperimentInput, GridConfig, SolverConfig
from sbm_lab.numerics.grid import Field as GridField
from sbm_lab.numerics.grid import Grid1D
from sbm_lab.numerics.log_laplace import (
    evolve,
    heat_evolve,
    heat_kernel,
    mass_integral,
    reaction_substep,
    very_singular_profile,
)
from sbm_lab.utils.experiment_decorator import experiment
from sbm_lab.utils.rng import path_stream

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "pde"


class PdeInput(ExperimentInput):
    """Input model for the log-Laplace checks."""
    grid: GridConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    t: float = Field(default=0.5, gt=0, description="Evaluation time of the monotone-limit check")
    window: float = Field(default=3.0, gt=0, description="Comparisons use |x| <= window")
    heat_grid: Optional[GridConfig] = Field(default=None, description="Grid of the heat-kernel check")
    heat_t: float = Field(default=0.5, gt=0)
    monotone_masses: List[float] = Field(default_factory=lambda: [1, 4, 16, 64, 256, 1024])
    self_similar_t0: float = Field(default=0.25, gt=0)
    self_similar_dt: float = Field(default=0.25, gt=0)
    comparison_cases: int = Field(default=20, ge=0)
    comparison_t: float = Field(default=0.5, gt=0)
    profile_xi_max: float = Field(default=6.0, gt=0)
    profile_tol: float = Field(default=1e-8, gt=0)
    mass_integral_horizons: List[float] = Field(default_factory=list)


def _sup_gap(numeric: np.ndarray, exact: np.ndarray, mask: np.ndarray) -> float:
    return float(np.max(np.abs(numeric[mask] - exact[mask])) / np.max(np.abs(exact[mask])))


def reaction_table(run: RunContext) -> Dict[str, Any]:
    rows, worst = [], 0.0
    grid_values = np.array([0.0, 1.0, 2.0, 10.0])
    for tau in (0.01, 0.1, 1.0):
        field = GridField(Grid1D(1.0, 6), np.concatenate([[0.0], grid_values, [0.0]]))
        numeric = reaction_substep(field, tau).values[1:-1]
        exact = grid_values / (1.0 + 0.5 * tau * grid_values)
        for v0, got, want in zip(grid_values, numeric, exact):
            worst = max(worst, abs(got - want))
            rows.append((v0, tau, got, want, abs(got - want)))
    run.csv("reaction.csv", ["v0", "tau", "numeric", "exact", "error"], rows)
    return {"max_error": worst, "pass": worst <= 1e-12}


def heat_check(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    grid = (params.heat_grid or params.grid).build()
    solver_opts = params.solver.options()
    numeric = heat_evolve(GridField.delta(grid, 0.0), params.heat_t, params.solver.dt, **solver_opts).values
    exact = heat_kernel(params.heat_t, grid.nodes)
    mask = np.abs(grid.nodes) <= 0.5 * grid.L
    gap = _sup_gap(numeric, exact, mask)
    run.csv("heat.csv", ["x", "numeric", "exact"], zip(grid.nodes, numeric, exact),
            {"t": params.heat_t, "dx": grid.dx})
    logger.info(f"Heat oracle: sup relative error {gap:.3e}")
    return {"sup_relative_error": gap, "pass": gap < 5e-3}


def profile_check(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    profile = very_singular_profile(params.profile_xi_max, params.profile_tol)
    profile.to_csv(run.path("profile.csv"))
    window = (profile.xi >= 4.0) & (profile.xi <= min(6.0, profile.xi_max))
    ratio = profile.tail_ratio(profile.xi[window])
    variation = float((ratio.max() - ratio.min()) / ratio.mean()) if ratio.size else float("nan")
    return {
        "f0": profile.f0,
        "K": profile.mass,
        "tail_constant": profile.tail_constant,
        "residual": profile.residual,
        "shooting_iterations": profile.iterations,
        "tail_ratio_variation": variation,
        "pass": bool(profile.residual < params.profile_tol and variation < 0.01),
    }


def monotone_limit(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    solver = params.solver.build(grid)
    W = solver.singular_values(0.0, params.t)
    mask = np.abs(grid.nodes) <= params.window
    rows, previous, monotone, below = [], None, True, True
    for m in sorted(params.monotone_masses):
        V = evolve([(0.0, float(m))], params.t, solver.dt, grid=grid, **params.solver.options()).values
        gap = _sup_gap(V, W, mask)
        if previous is not None:
            monotone &= bool(np.all(V >= previous - 1e-10))
        below &= bool(np.all(V[mask] <= W[mask] * (1 + 1e-2) + 1e-8))
        rows.append((m, gap, float(V[grid.nearest_index(0.0)])))
        previous = V
    run.csv("monotone.csv", ["mass", "sup_relative_gap", "center_value"], rows,
            {"t": params.t, "W_center": float(W[grid.nearest_index(0.0)])})
    final_gap = rows[-1][1] if rows else float("nan")
    return {"final_gap": final_gap, "monotone": monotone, "below_W": below, "pass": bool(final_gap < 0.02)}


def self_similar(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    solver = params.solver.build(grid)
    t0, dt = params.self_similar_t0, params.self_similar_dt
    start = GridField(grid, solver.singular_values(0.0, t0))
    V = evolve(start, dt, solver.dt, **params.solver.options()).values
    W = solver.singular_values(0.0, t0 + dt)
    mask = np.abs(grid.nodes) <= params.window
    gap = _sup_gap(V, W, mask)
    run.csv("self_similar.csv", ["x", "evolved", "W"], zip(grid.nodes, V, W), {"t0": t0, "dt": dt})
    return {"sup_relative_error": gap, "pass": gap < 0.01}


def comparison_suite(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    """Randomized V <= S mu, subadditivity and monotonicity checks."""
    grid = params.grid.build()
    rng = path_stream(params.mc.seed, 0)
    t, dt, opts = params.comparison_t, params.solver.dt, params.solver.options()

    def random_atoms():
        count = int(rng.integers(1, 4))
        xs = rng.uniform(-0.25 * grid.L, 0.25 * grid.L, count)
        ms = rng.uniform(0.1, 5.0, count)
        return [(float(x), float(m)) for x, m in zip(xs, ms)]

    def violated(lhs, rhs):
        return int(np.count_nonzero(lhs > rhs + 1e-6 + 0.01 * np.abs(rhs)))

    rows, total = [], 0
    for case in range(params.comparison_cases):
        mu, eta = random_atoms(), random_atoms()
        V_mu = evolve(mu, t, dt, grid=grid, **opts).values
        V_eta = evolve(eta, t, dt, grid=grid, **opts).values
        V_sum = evolve(mu + eta, t, dt, grid=grid, **opts).values
        S_mu = heat_evolve(mu, t, dt, grid=grid, **opts).values
        counts = (violated(V_mu, S_mu), violated(V_sum, V_mu + V_eta), violated(V_mu, V_sum))
        total += sum(counts)
        rows.append((case, len(mu), len(eta)) + counts)
    run.csv("comparison.csv", ["case", "atoms_mu", "atoms_eta", "heat_domination", "subadditivity",
                               "monotonicity"], rows, {"t": t})
    return {"cases": params.comparison_cases, "violations": total, "pass": total == 0}


def mass_integrals(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    grid = params.grid.build()
    horizons = sorted(params.mass_integral_horizons)
    values = [mass_integral([(0.0, 1.0)], T, params.solver.dt, grid=grid, **params.solver.options())
              for T in horizons]
    run.csv("mass_integral.csv", ["T", "integral"], zip(horizons, values))
    return {"increasing": all(b > a for a, b in zip(values, values[1:])), "values": values}


@experiment(
    name=EXPERIMENT_NAME,
    description="Reaction, heat-kernel, profile, monotone-limit, self-similarity and comparison checks",
    input_model=PdeInput,
    outputs=["reaction.csv", "heat.csv", "profile.csv", "monotone.csv", "self_similar.csv", "comparison.csv"],
)
def run_pde(params: PdeInput, run: RunContext) -> Dict[str, Any]:
    summary = {
        "reaction": reaction_table(run),
        "heat": heat_check(params, run),
        "profile": profile_check(params, run),
        "monotone_limit": monotone_limit(params, run),
        "self_similar": self_similar(params, run),
        "comparison": comparison_suite(params, run),
    }
    if params.mass_integral_horizons:
        summary["mass_integral"] = mass_integrals(params, run)
    summary["pass"] = all(part.get("pass", True) for part in summary.values())
    return summary
