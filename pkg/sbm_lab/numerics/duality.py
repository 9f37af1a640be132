"""
Monte Carlo checks of the duality identities.

E exp(-<X_t, mu>) is estimated from SPDE paths and compared with

* exp(-<X0, V_t(mu)>)                                  (h = 0),
* exp(-<X0, V_t(mu)> - a int_0^t <V_s(mu), 1> ds)       (h = a),
* E (-1)^{J_t} exp(-<X0, Y_t> - a int_0^t <Y_s, 1> ds)  (general h, dual MC).

Path chunks run through ``map_ordered`` and are concatenated in path order,
so estimates do not depend on the worker count.
"""
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sbm_lab.core.errors import PreconditionError
from sbm_lab.numerics.drift_model import (
    INFINITE_LEVEL,
    DriftSpec,
    TruncationLevel,
    immigration_drift,
    zero_drift,
)
from sbm_lab.numerics.dual_process import CLOCK_TOL, MAX_JUMPS, DualSimulator, duality_functional
from sbm_lab.numerics.grid import Field
from sbm_lab.numerics.log_laplace import LogLaplaceSolver, Atoms, trapezoid, very_singular_mass_integral
from sbm_lab.numerics.spde import SpdeParams, laplace_functional_batch, simulate_spde_batch
from sbm_lab.utils.parallel import chunked, map_ordered

logger = logging.getLogger(__name__)

VARIANCE_FLAG_RATIO = 1.0


@dataclass(frozen=True)
class MonteCarloParams:
    paths: int
    seed: int = 0
    workers: int = 1
    chunk: int = 256
    sigma: float = 3.0

    def __post_init__(self):
        if self.paths < 2:
            raise PreconditionError("Monte Carlo needs at least 2 paths")
        if self.chunk < 1 or self.workers < 1:
            raise PreconditionError("chunk and workers must be >= 1")

    def path_chunks(self) -> List[Sequence[int]]:
        return chunked(range(self.paths), self.chunk)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    @classmethod
    def of(cls, samples: np.ndarray) -> "Estimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        stderr = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(samples.mean()), stderr, n)

    @classmethod
    def exact(cls, value: float) -> "Estimate":
        return cls(float(value), 0.0, 0)


@dataclass
class DualityReport:
    name: str
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    bias_budget: float
    sigma: float = 3.0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs

    @property
    def tolerance(self) -> float:
        return self.sigma * math.hypot(self.lhs_stderr, self.rhs_stderr) + self.bias_budget

    @property
    def passed(self) -> bool:
        return abs(self.difference) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_stderr,
            "difference": self.difference,
            "bias_budget": self.bias_budget,
            "tolerance": self.tolerance,
            "pass": self.passed,
            **self.extra,
        }


def bias_budget(estimator: Callable[[float], float], dt: float) -> float:
    """|est(dt) - est(dt/2)|: the dt-halving estimate of the scheme bias."""
    coarse, fine = estimator(dt), estimator(0.5 * dt)
    logger.info(f"Bias check: est(dt={dt:g})={coarse:.6g}, est(dt/2)={fine:.6g}")
    return abs(coarse - fine)


# ---------------------------------------------------------------------------
# Chunk workers (module level so process pools can pickle them)

def _spde_chunk(task) -> np.ndarray:
    X0, params, ids, mu = task
    batch = simulate_spde_batch(X0, params, ids)
    return laplace_functional_batch(batch.final, params.grid, mu)


def _dual_chunk(task) -> Tuple[np.ndarray, np.ndarray]:
    simulator, X0, mu, t, seed, ids = task
    values, parities = np.empty(len(ids)), np.empty(len(ids), dtype=int)
    for i, pid in enumerate(ids):
        path = simulator.simulate(mu, t, seed, pid)
        values[i] = duality_functional(path, X0, simulator.drift.a)
        parities[i] = path.J(t) % 2
    return values, parities


def spde_laplace_samples(X0: Field, mu: Atoms, params: SpdeParams, mc: MonteCarloParams) -> np.ndarray:
    """exp(-<X_t, mu>) for each path, in path order."""
    tasks = [(X0, params, list(ids), list(mu)) for ids in mc.path_chunks()]
    return np.concatenate(map_ordered(_spde_chunk, tasks, mc.workers))


def dual_samples(X0: Field, mu: Atoms, t: float, simulator: DualSimulator,
                 mc: MonteCarloParams) -> Tuple[np.ndarray, np.ndarray]:
    """Signed duality functionals and J_t mod 2 for each dual path, in path order."""
    tasks = [(simulator, X0, list(mu), t, mc.seed, list(ids)) for ids in mc.path_chunks()]
    results = map_ordered(_dual_chunk, tasks, mc.workers)
    return (np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results]))


def _check_inputs(X0: Field, solver: LogLaplaceSolver, t: float):
    if X0.grid != solver.grid:
        raise PreconditionError("X0 and the solver use different grids")
    if not t > 0:
        raise PreconditionError("t must be > 0")


def _spde_estimate(X0: Field, mu: Atoms, params: SpdeParams, mc: MonteCarloParams,
                   with_bias: bool) -> Tuple[Estimate, float]:
    estimate = Estimate.of(spde_laplace_samples(X0, mu, params, mc))
    budget = 0.0
    if with_bias:
        cache = {params.dt: estimate.mean}

        def estimator(dt: float) -> float:
            if dt not in cache:
                cache[dt] = Estimate.of(spde_laplace_samples(X0, mu, params.with_dt(dt), mc)).mean
            return cache[dt]

        budget = bias_budget(estimator, params.dt)
    return estimate, budget


def log_laplace_functional(X0: Field, mu: Atoms, t: float, a: float, solver: LogLaplaceSolver) -> float:
    """exp(-<X0, V_t(mu)> - a int_0^t <V_s(mu), 1> ds)."""
    values, times, masses = solver.flow(solver.regularize(mu), t, record=True)
    exponent = X0.pair(Field(solver.grid, values))
    if a:
        exponent += a * trapezoid(times, masses)
    return math.exp(-exponent)


def _unsigned_report(name: str, X0: Field, mu: Atoms, a: float, t: float, mc: MonteCarloParams, *,
                     solver: LogLaplaceSolver, spde_dt: float, with_bias: bool) -> DualityReport:
    _check_inputs(X0, solver, t)
    drift = immigration_drift(a) if a else zero_drift()
    params = SpdeParams(grid=solver.grid, dt=spde_dt, horizon=t, drift=drift, seed=mc.seed)
    lhs, budget = _spde_estimate(X0, mu, params, mc, with_bias)
    rhs = log_laplace_functional(X0, mu, t, a, solver)
    report = DualityReport(name, lhs.mean, lhs.stderr, rhs, 0.0, budget, mc.sigma,
                           extra={"t": t, "a": a, "paths": mc.paths, "seed": mc.seed,
                                  "in_unit_interval": bool(0 < rhs <= 1 and 0 < lhs.mean <= 1)})
    logger.info(f"{name}: LHS={lhs.mean:.6f}+-{lhs.stderr:.2g} RHS={rhs:.6f} pass={report.passed}")
    return report


def duality_h0(X0: Field, mu: Atoms, t: float, mc: MonteCarloParams, *, solver: LogLaplaceSolver,
               spde_dt: float, with_bias: bool = True) -> DualityReport:
    """SPDE Monte Carlo of E exp(-<X_t, mu>) against exp(-<X0, V_t(mu)>) for h = 0."""
    return _unsigned_report("duality_h0", X0, mu, 0.0, t, mc, solver=solver, spde_dt=spde_dt,
                            with_bias=with_bias)


def duality_const_immigration(X0: Field, mu: Atoms, a_const: float, t: float, mc: MonteCarloParams, *,
                              solver: LogLaplaceSolver, spde_dt: float,
                              with_bias: bool = True) -> DualityReport:
    if a_const < 0:
        raise PreconditionError("immigration rate must be >= 0")
    return _unsigned_report("duality_const_immigration", X0, mu, a_const, t, mc, solver=solver,
                            spde_dt=spde_dt, with_bias=with_bias)


def _dual_estimate(X0: Field, mu: Atoms, drift: DriftSpec, level: TruncationLevel, t: float,
                   mc: MonteCarloParams, solver: LogLaplaceSolver, clock_tol: float,
                   max_jumps: int) -> Tuple[Estimate, np.ndarray, np.ndarray]:
    simulator = DualSimulator(drift=drift, solver=solver, level=level, clock_tol=clock_tol,
                              max_jumps=max_jumps)
    values, parities = dual_samples(X0, mu, t, simulator, mc)
    return Estimate.of(values), values, parities


def duality_full(X0: Field, mu: Atoms, drift: DriftSpec, level: TruncationLevel, t: float,
                 mc: MonteCarloParams, *, solver: LogLaplaceSolver, spde_dt: float,
                 dual_mc: Optional[MonteCarloParams] = None, lhs_level: Optional[TruncationLevel] = None,
                 clock_tol: float = CLOCK_TOL, max_jumps: int = MAX_JUMPS,
                 with_bias: bool = False) -> DualityReport:
    """
    Two-sided Monte Carlo of the signed duality.

    The SPDE side uses the drift h (or h_n when ``lhs_level`` is given); the
    dual side runs at ``level``. A relative standard error above one on the
    dual side raises the variance flag.
    """
    _check_inputs(X0, solver, t)
    dual_mc = dual_mc or mc
    params = SpdeParams(grid=solver.grid, dt=spde_dt, horizon=t, drift=drift,
                        level=lhs_level, seed=mc.seed)
    lhs, budget = _spde_estimate(X0, mu, params, mc, with_bias)
    rhs, _, parities = _dual_estimate(X0, mu, drift, level, t, dual_mc, solver, clock_tol, max_jumps)

    variance_flag = rhs.stderr > VARIANCE_FLAG_RATIO * abs(rhs.mean)
    if variance_flag:
        logger.warning(f"Dual estimate has stderr {rhs.stderr:.3g} against mean {rhs.mean:.3g}; "
                       f"horizon t={t} is likely too long for a={drift.a}")
    report = DualityReport(
        "duality_full", lhs.mean, lhs.stderr, rhs.mean, rhs.stderr, budget, mc.sigma,
        extra={
            "t": t,
            "a": drift.a,
            "level": str(level),
            "drift": drift.label,
            "lhs_paths": mc.paths,
            "rhs_paths": dual_mc.paths,
            "p_odd": float(parities.mean()),
            "variance_flag": bool(variance_flag),
            "rhs_in_unit_interval": bool(rhs.mean - mc.sigma * rhs.stderr <= 1
                                         and rhs.mean + mc.sigma * rhs.stderr > 0),
        },
    )
    logger.info(f"duality_full[{drift.label}, n={level}]: LHS={lhs.mean:.6f}+-{lhs.stderr:.2g} "
                f"RHS={rhs.mean:.6f}+-{rhs.stderr:.2g} P(J odd)={parities.mean():.3f} pass={report.passed}")
    return report


def level_sweep(X0: Field, mu: Atoms, drift: DriftSpec, levels: Sequence[int], t: float,
                mc: MonteCarloParams, *, solver: LogLaplaceSolver, clock_tol: float = CLOCK_TOL,
                max_jumps: int = MAX_JUMPS) -> List[dict]:
    """
    Dual-side estimates over truncation levels with paired seeds.

    Every level reuses the same (seed, path_id) streams; ``cauchy`` is
    |RHS(n_k) - RHS(n_{k+1})| with the standard error of the paired
    differences.
    """
    levels = sorted(int(n) for n in levels)
    samples = []
    rows = []
    for n in levels:
        estimate, values, parities = _dual_estimate(X0, mu, drift, TruncationLevel(n), t, mc, solver,
                                                    clock_tol, max_jumps)
        samples.append(values)
        rows.append({"level": n, "rhs": estimate.mean, "rhs_stderr": estimate.stderr,
                     "p_odd": float(parities.mean())})
    for k in range(len(rows)):
        if k + 1 < len(rows):
            diff = Estimate.of(samples[k] - samples[k + 1])
            rows[k]["cauchy"] = abs(diff.mean)
            rows[k]["cauchy_stderr"] = diff.stderr
        else:
            rows[k]["cauchy"] = math.nan
            rows[k]["cauchy_stderr"] = math.nan
    cauchy = [r["cauchy"] for r in rows[:-1]]
    decreasing = all(b <= a for a, b in zip(cauchy, cauchy[1:]))
    logger.info(f"Level sweep {levels}: Cauchy differences {[f'{c:.3g}' for c in cauchy]} "
                f"({'decreasing' if decreasing else 'not monotone'})")
    return rows


def warm_start_sweep(X0: Field, mu: Atoms, drift: DriftSpec, eps_values: Sequence[float], t: float,
                     mc: MonteCarloParams, *, solver: LogLaplaceSolver, clock_tol: float = CLOCK_TOL,
                     max_jumps: int = MAX_JUMPS) -> List[dict]:
    """Level-infinity dual estimates as the warm-start time of infinite atoms shrinks."""
    rows = []
    for eps in sorted(eps_values, reverse=True):
        estimate, _, parities = _dual_estimate(X0, mu, drift, INFINITE_LEVEL, t, mc,
                                               replace(solver, eps_w=eps), clock_tol, max_jumps)
        rows.append({"eps_w": eps, "rhs": estimate.mean, "rhs_stderr": estimate.stderr,
                     "p_odd": float(parities.mean())})
    return rows


# ---------------------------------------------------------------------------
# Extinction probabilities

def extinction_probability(X0: Optional[Field], x: float, t: float, a_const: float, *,
                           solver: LogLaplaceSolver) -> float:
    """
    exp(-<X0, W_t(. - x)> - a int_0^t <W_s, 1> ds), the limit of
    E exp(-<X_t, m delta_x>) as m grows.
    """
    if not t > 0:
        raise PreconditionError("t must be > 0")
    exponent = a_const * very_singular_mass_integral(t, solver.singular_profile)
    if X0 is not None:
        if X0.grid != solver.grid:
            raise PreconditionError("X0 and the solver use different grids")
        exponent += X0.grid.dx * float(np.dot(X0.values, solver.singular_values(x, t)))
    return math.exp(-exponent)


def extinction_sweep(X0: Optional[Field], x: float, t: float, a_const: float, *,
                     solver: LogLaplaceSolver, masses: Sequence[float] = (1, 4, 16, 64, 256)) -> dict:
    """The m-sweep of exp(-<X0, V_t(m delta_x)> - a int <V_s(m delta_x), 1>) against its limit."""
    limit = extinction_probability(X0, x, t, a_const, solver=solver)
    X0 = X0 if X0 is not None else solver.grid.zeros()
    rows = []
    for m in masses:
        value = log_laplace_functional(X0, [(x, float(m))], t, a_const, solver)
        rows.append({"m": m, "value": value, "relative_gap": (value - limit) / limit})
    values = [r["value"] for r in rows]
    return {
        "limit": limit,
        "rows": rows,
        "monotone": all(b <= a for a, b in zip(values, values[1:])),
        "final_relative_gap": rows[-1]["relative_gap"] if rows else math.nan,
    }
