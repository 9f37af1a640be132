"""
The artificial branching particle system that dominates the dual's jumps.

The root particle gives birth at rate nu_bar <V_s(Y0), 1>; a particle born at
time tau gives birth at rate nu_bar <W_{s - tau}, 1> = nu_bar K (s - tau)^{-1/2}.
No particle dies. With shared Exp(1) clocks the birth times R_i of this system
sit below the dual's jump times T_i, and its integrated mass dominates the
dual's.
"""
import math
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from sbm_lab.core.errors import NumericalAbort, PreconditionError
from sbm_lab.numerics.drift_model import DriftSpec, TruncationLevel
from sbm_lab.numerics.dual_process import CLOCK_TOL, DualPath, DualSimulator
from sbm_lab.numerics.log_laplace import InitialData, LogLaplaceSolver
from sbm_lab.utils.parallel import chunked, map_ordered
from sbm_lab.utils.rng import Stream, path_stream

logger = logging.getLogger(__name__)

POPULATION_CAP = 1_000_000

Label = Tuple[int, ...]


@dataclass
class BranchingRecord:
    """Labeled particle tree: root (1,), children append their birth rank."""
    horizon: float
    labels: List[Label] = field(default_factory=lambda: [(1,)])
    birth_times: List[float] = field(default_factory=lambda: [0.0])

    @property
    def size(self) -> int:
        return len(self.labels)

    def alive_count(self, t: float) -> int:
        """|I_t|: particles born by time t."""
        return sum(1 for b in self.birth_times if b <= t)

    def alive_trajectory(self, times: Sequence[float]) -> np.ndarray:
        births = np.sort(np.asarray(self.birth_times))
        return np.searchsorted(births, np.asarray(times, dtype=float), side="right")

    def generation_counts(self, t: float) -> Dict[int, int]:
        """|I_t^i| keyed by generation i = len(label) - 1."""
        counts: Dict[int, int] = {}
        for label, birth in zip(self.labels, self.birth_times):
            if birth <= t:
                counts[len(label) - 1] = counts.get(len(label) - 1, 0) + 1
        return counts

    def is_prefix_closed(self) -> bool:
        present = set(self.labels)
        return all(label[:-1] in present for label in self.labels if len(label) > 1)


@dataclass
class RootFlow:
    """
    The deterministic flow V_s(Y0) stored step by step.

    Integrals at times inside a step re-run that step with the shorter length,
    using the same arithmetic as the dual's clock inversion.
    """
    solver: LogLaplaceSolver
    starts: List[np.ndarray]
    times: np.ndarray
    masses: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def compute(cls, solver: LogLaplaceSolver, Y0: InitialData, horizon: float) -> "RootFlow":
        dx = solver.grid.dx
        values = solver.regularize(Y0)
        starts, times, masses = [values], [0.0], [dx * values.sum()]
        t, k = 0.0, 0
        eps = 1e-12 * max(horizon, 1.0)
        while horizon - t > eps:
            tau = min(solver.nominal_step(k), horizon - t)
            values = solver.step(values, tau, k)
            t += tau
            k += 1
            starts.append(values)
            times.append(t)
            masses.append(dx * values.sum())
        times, masses = np.asarray(times), np.asarray(masses)
        cumulative = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (masses[1:] + masses[:-1]))])
        return cls(solver=solver, starts=starts, times=times, masses=masses, cumulative=cumulative)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def integral(self, t: float) -> float:
        """int_0^t <V_s(Y0), 1> ds."""
        if t <= 0:
            return 0.0
        if t >= self.horizon:
            return float(self.cumulative[-1])
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        tau = t - self.times[k]
        if tau <= 0:
            return float(self.cumulative[k])
        sub = self.solver.step(self.starts[k], tau, k)
        return float(self.cumulative[k] + 0.5 * tau * (self.masses[k] + self.solver.grid.dx * sub.sum()))

    def inverse(self, level: float, clock_tol: float = CLOCK_TOL) -> Optional[float]:
        """Smallest t with integral(t) >= level, or None past the horizon."""
        if level <= 0:
            return 0.0
        if level > self.cumulative[-1]:
            return None
        k = int(np.searchsorted(self.cumulative, level, side="left")) - 1
        k = max(k, 0)
        need = level - self.cumulative[k]
        t0, span = self.times[k], self.times[k + 1] - self.times[k]
        lo, hi = 0.0, span
        dx = self.solver.grid.dx
        while hi - lo > clock_tol * (t0 + hi):
            mid = 0.5 * (lo + hi)
            trial = self.solver.step(self.starts[k], mid, k)
            if 0.5 * mid * (self.masses[k] + dx * trial.sum()) >= need:
                hi = mid
            else:
                lo = mid
        return float(t0 + hi)


def simulate_branching(Y0: InitialData, horizon: float, nu_bar: float, dt: float, seed: int, *,
                       solver: LogLaplaceSolver, path_id: int = 0,
                       root: Optional[RootFlow] = None,
                       population_cap: int = POPULATION_CAP) -> BranchingRecord:
    """
    One run of the branching system on [0, horizon].

    Births of each particle are the Poisson arrivals of its cumulative
    intensity, placed by inverting that intensity.
    """
    if not horizon > 0:
        raise PreconditionError("horizon must be > 0")
    if nu_bar < 0:
        raise PreconditionError("nu_bar must be >= 0")
    record = BranchingRecord(horizon=horizon)
    if nu_bar == 0:
        return record

    if dt != solver.dt:
        solver = LogLaplaceSolver(grid=solver.grid, dt=dt, theta=solver.theta,
                                  startup_steps=solver.startup_steps, grading=solver.grading,
                                  eps_w=solver.eps_w, profile=solver.profile)
    root = root or RootFlow.compute(solver, Y0, horizon)
    K = solver.singular_profile.mass
    rng = path_stream(seed, path_id, Stream.BRANCHING)

    queue = deque([((1,), 0.0, True)])
    while queue:
        label, born, is_root = queue.popleft()
        arrival, rank = 0.0, 0
        while True:
            arrival += rng.exponential()
            if is_root:
                birth = root.inverse(arrival / nu_bar)
            else:
                birth = born + (arrival / (2.0 * nu_bar * K)) ** 2
            if birth is None or birth > horizon:
                break
            rank += 1
            child = label + (rank,)
            record.labels.append(child)
            record.birth_times.append(birth)
            queue.append((child, birth, False))
            if record.size > population_cap:
                raise NumericalAbort(
                    f"branching population exceeded {population_cap}",
                    {"seed": seed, "path_id": path_id, "time": birth, "nu_bar": nu_bar},
                )
    return record


def _branching_chunk(task) -> List[BranchingRecord]:
    Y0, horizon, nu_bar, seed, solver, root, ids = task
    return [simulate_branching(Y0, horizon, nu_bar, solver.dt, seed, solver=solver, path_id=pid, root=root)
            for pid in ids]


def simulate_branching_runs(Y0: InitialData, horizon: float, nu_bar: float, seed: int,
                            path_ids: Sequence[int], *, solver: LogLaplaceSolver, chunk: int = 256,
                            workers: int = 1) -> List[BranchingRecord]:
    """Independent runs sharing one root flow, returned in path order."""
    root = RootFlow.compute(solver, Y0, horizon) if nu_bar > 0 else None
    tasks = [(Y0, horizon, nu_bar, seed, solver, root, list(ids)) for ids in chunked(list(path_ids), chunk)]
    return [record for part in map_ordered(_branching_chunk, tasks, workers) for record in part]


# ---------------------------------------------------------------------------
# Total progeny

def borel_tanner_pmf(lam: float, k):
    """P(Z = k) = e^{-lam k} (lam k)^{k-1} / k!, evaluated in log space."""
    if not 0 < lam <= 1:
        raise PreconditionError(f"Borel-Tanner parameter must lie in (0, 1], got {lam}")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise PreconditionError("k must be a positive integer")
    kf = k.astype(float)
    log_p = -lam * kf + (kf - 1.0) * np.log(lam * kf) - gammaln(kf + 1.0)
    p = np.exp(log_p)
    return float(p) if p.ndim == 0 else p


def total_progeny_sample(rng: np.random.Generator, lam: float, cap: int = 10 ** 8) -> int:
    """Total progeny of a Poisson(lam) Galton-Watson tree started from one individual."""
    if not 0 < lam < 1:
        raise PreconditionError(f"offspring mean must lie in (0, 1), got {lam}")
    total, generation = 1, 1
    while generation > 0:
        generation = int(rng.poisson(lam * generation))
        total += generation
        if total > cap:
            raise NumericalAbort("Galton-Watson tree exceeded the size cap", {"lambda": lam, "cap": cap})
    return total


def progeny_parameter(nu_bar: float, T: float, mass_integral_V: float, K: float) -> float:
    """lambda(T) = nu_bar (2 K sqrt(T) + int_0^T <V_s(Y0), 1> ds)."""
    return nu_bar * (2.0 * K * math.sqrt(T) + mass_integral_V)


def admissible_gamma(lam: float) -> float:
    """Largest gamma with a finite exponential moment bound: lambda - 1 - log(lambda)."""
    if not 0 < lam <= 1:
        raise PreconditionError("lambda must lie in (0, 1]")
    return lam - 1.0 - math.log(lam)


def small_horizon(nu_bar: float, Y0: InitialData, target: float, *, solver: LogLaplaceSolver,
                  t_max: float = 1.0) -> float:
    """Largest T <= t_max with lambda(T) <= target."""
    if not target > 0:
        raise PreconditionError("target must be > 0")
    if nu_bar == 0:
        return t_max
    root = RootFlow.compute(solver, Y0, t_max)
    K = solver.singular_profile.mass

    def excess(T):
        return progeny_parameter(nu_bar, T, root.integral(T), K) - target

    if excess(t_max) <= 0:
        return t_max
    return float(brentq(excess, 0.0, t_max, xtol=1e-12))


# ---------------------------------------------------------------------------
# Diagnostics over many runs

def generation_means(records: Sequence[BranchingRecord], t: float, max_generation: int) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of |I_t^i| for i = 0..max_generation."""
    counts = np.zeros((len(records), max_generation + 1))
    for r, record in enumerate(records):
        for gen, count in record.generation_counts(t).items():
            if gen <= max_generation:
                counts[r, gen] = count
    n = max(len(records), 1)
    return counts.mean(axis=0), counts.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(max_generation + 1)


def generation_bound_check(records: Sequence[BranchingRecord], T: float, max_generation: int = 6) -> List[dict]:
    """Compare E|I_T^i| with 2^{-i}, the bound valid when lambda(T) <= 1/2."""
    means, stderr = generation_means(records, T, max_generation)
    return [
        {
            "generation": i,
            "mean": float(means[i]),
            "stderr": float(stderr[i]),
            "bound": 2.0 ** -i,
            "holds": bool(means[i] - 3.0 * stderr[i] <= 2.0 ** -i),
        }
        for i in range(max_generation + 1)
    ]


def exponential_moment(records: Sequence[BranchingRecord], gamma: float, batches: int = 4) -> dict:
    """Empirical E exp(gamma |I_T|) and its spread across batches."""
    sizes = np.array([r.alive_count(r.horizon) for r in records], dtype=float)
    values = np.exp(gamma * sizes)
    batch_means = [float(b.mean()) for b in np.array_split(values, batches) if b.size]
    mean = float(values.mean())
    spread = (max(batch_means) - min(batch_means)) / mean if mean > 0 else 0.0
    return {"gamma": gamma, "mean": mean, "batch_means": batch_means, "relative_spread": spread}


# ---------------------------------------------------------------------------
# Coupling with the dual

@dataclass
class CouplingReport:
    seed: int
    path_id: int
    nu_bar: float
    dual_jump_times: List[float]
    branching_birth_times: List[float]
    gap_violations: int = 0
    mass_violations: int = 0
    max_gap_excess: float = 0.0
    max_mass_excess: float = 0.0

    @property
    def violations(self) -> int:
        return self.gap_violations + self.mass_violations

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "path_id": self.path_id,
            "nu_bar": self.nu_bar,
            "dual_jumps": len(self.dual_jump_times),
            "gap_violations": self.gap_violations,
            "mass_violations": self.mass_violations,
            "max_gap_excess": self.max_gap_excess,
            "max_mass_excess": self.max_mass_excess,
        }


def coupled_dual_branching(Y0: InitialData, horizon: float, level: TruncationLevel, seed: int, *,
                           drift: DriftSpec, solver: LogLaplaceSolver, path_id: int = 0,
                           rel_slack: float = 1e-6, check_points: int = 20,
                           clock_tol: float = CLOCK_TOL) -> CouplingReport:
    """
    Run the dual and the branching system on the same clocks S_k.

    The branching birth times solve Lambda(R_i) - Lambda(R_{i-1}) = S_i with
    Lambda(t) = nu_bar (int_0^t <V_s(Y0),1> ds + sum_{R_k < t} 2K sqrt(t - R_k)).
    Checks R_i <= T_i and int_0^t <Y_s,1> ds <= int_0^t <Yhat_s,1> ds up to slack.
    """
    level = TruncationLevel.parse(level)
    simulator = DualSimulator(drift=drift, solver=solver, level=level, clock_tol=clock_tol)
    path: DualPath = simulator.simulate(Y0, horizon, seed, path_id)
    nu_bar = path.rate
    root = RootFlow.compute(solver, Y0, horizon)
    K = solver.singular_profile.mass
    births: List[float] = []

    def hat_integral(t: float) -> float:
        return root.integral(t) + sum(2.0 * K * math.sqrt(t - r) for r in births if r < t)

    report = CouplingReport(seed=seed, path_id=path_id, nu_bar=nu_bar,
                            dual_jump_times=list(path.jump_times), branching_birth_times=births)

    previous, level_reached = 0.0, 0.0
    for i, (T_i, S_i) in enumerate(zip(path.jump_times, path.clock_levels), start=1):
        target = level_reached + S_i / nu_bar
        if hat_integral(horizon) < target:
            R_i = math.inf
        elif i == 1:
            R_i = root.inverse(target, clock_tol)
        else:
            R_i = float(brentq(lambda t: hat_integral(t) - target, previous, horizon, xtol=1e-14, rtol=1e-13))
        slack = (rel_slack + i * clock_tol) * T_i
        excess = R_i - T_i
        if excess > slack:
            report.gap_violations += 1
            report.max_gap_excess = max(report.max_gap_excess, excess)
            logger.warning(f"Coupling gap violation on path {path_id}: R_{i}={R_i} > T_{i}={T_i}")
        if math.isinf(R_i):
            break
        births.append(R_i)
        previous, level_reached = R_i, target

    checks = sorted(set(np.linspace(0.0, horizon, check_points + 1).tolist() + list(path.jump_times)))
    for t in checks:
        dual_value = path.integrated_mass(min(t, horizon))
        bound = hat_integral(t)
        excess = dual_value - bound
        if excess > rel_slack * max(bound, 1e-300) + clock_tol * bound:
            report.mass_violations += 1
            report.max_mass_excess = max(report.max_mass_excess, excess)
    if report.violations:
        logger.info(f"Coupled path {path_id}: {report.violations} violations")
    return report


def _coupling_chunk(task) -> List[CouplingReport]:
    Y0, horizon, level, seed, drift, solver, clock_tol, ids = task
    return [coupled_dual_branching(Y0, horizon, level, seed, drift=drift, solver=solver, path_id=pid,
                                   clock_tol=clock_tol) for pid in ids]


def coupled_runs(Y0: InitialData, horizon: float, level: TruncationLevel, seed: int, path_ids: Sequence[int], *,
                 drift: DriftSpec, solver: LogLaplaceSolver, clock_tol: float = CLOCK_TOL,
                 chunk: int = 32, workers: int = 1) -> List[CouplingReport]:
    tasks = [(Y0, horizon, level, seed, drift, solver, clock_tol, list(ids))
             for ids in chunked(list(path_ids), chunk)]
    reports = [r for part in map_ordered(_coupling_chunk, tasks, workers) for r in part]
    total = sum(r.violations for r in reports)
    logger.info(f"Coupling over {len(reports)} paths: {total} violations")
    return reports
