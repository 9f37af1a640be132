"""
The dual jump process Y.

Between jumps Y follows the log-Laplace flow. Jump k happens when the clock
nu_bar * int <Y_s, 1> ds accumulated since the previous jump exceeds an Exp(1)
variate S_k. At a jump an atom Z_k delta_{U_k} is added, with U_k drawn from
the normalized field and (M_k, Z_k) from the drift's jump measure. The sign
process J_t counts type-2 jumps.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from sbm_lab.core.errors import NumericalAbort, PreconditionError
from sbm_lab.numerics.drift_model import (
    INFINITE_LEVEL,
    DriftSpec,
    TruncationLevel,
    sample_jump_height,
    sample_jump_mark,
)
from sbm_lab.numerics.grid import Field
from sbm_lab.numerics.log_laplace import InitialData, LogLaplaceSolver
from sbm_lab.utils.parallel import chunked, map_ordered
from sbm_lab.utils.rng import Stream, path_stream

logger = logging.getLogger(__name__)

INF = math.inf
MAX_JUMPS = 1_000_000
CLOCK_TOL = 1e-6


@dataclass
class RegMeasureState:
    """A field plus atoms not yet absorbed into it; atom masses may be INF."""
    field: Field
    atoms: List[Tuple[float, float]] = field(default_factory=list)

    def is_zero(self) -> bool:
        return not self.atoms and not np.any(self.field.values > 0)


def apply_jump(state: RegMeasureState, location: float, height: float,
               level: TruncationLevel = INFINITE_LEVEL) -> RegMeasureState:
    """Y_T = Y_{T-} + height * delta_location; the atom is absorbed at the next flow."""
    if not height > 0:
        raise PreconditionError(f"jump height must be > 0, got {height}")
    if math.isinf(height) and not level.is_infinite:
        raise PreconditionError(f"infinite jump height at finite level {level}")
    return RegMeasureState(state.field, list(state.atoms) + [(float(location), float(height))])


def sample_jump_location(rng: np.random.Generator, state_before_jump: Field) -> float:
    """A grid node drawn with probability proportional to the field value."""
    values = state_before_jump.values
    total = values.sum()
    if not total > 0:
        raise PreconditionError("jump location needs a field with positive mass")
    cumulative = np.cumsum(values)
    i = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
    i = min(i, values.size - 1)
    # skip zero-weight nodes that searchsorted can land on at the right edge
    while values[i] == 0 and i > 0:
        i -= 1
    return float(state_before_jump.grid.nodes[i])


@dataclass
class ClockCrossing:
    """Outcome of one inter-jump flow."""
    time: Optional[float]
    integral: float
    values: np.ndarray
    times: List[float]
    masses: List[float]
    snapshots: Dict[float, np.ndarray]

    @property
    def horizon_exceeded(self) -> bool:
        return self.time is None


def next_jump_time(state: RegMeasureState, clock: float, total_rate_mass: float, dt: Optional[float] = None,
                   *, solver: LogLaplaceSolver, horizon: float,
                   stops: Sequence[float] = (), clock_tol: float = CLOCK_TOL) -> ClockCrossing:
    """
    Flow ``state`` until nu_bar * int_0^t <V_s, 1> ds exceeds ``clock``.

    The integral is accumulated by the trapezoid rule on the solver steps. When
    a step brackets the clock level, the step is re-run from its start with a
    shorter length, bisected until the crossing time is known to relative
    accuracy ``clock_tol``. ``time`` is None when the horizon comes first.
    ``stops`` are local times at which the flow must land (snapshot times).
    """
    if dt is not None and dt != solver.dt:
        solver = LogLaplaceSolver(grid=solver.grid, dt=dt, theta=solver.theta,
                                  startup_steps=solver.startup_steps, grading=solver.grading,
                                  eps_w=solver.eps_w, profile=solver.profile)
    dx = solver.grid.dx
    values = _absorb(state, solver)
    m0 = dx * values.sum()
    target = clock / total_rate_mass if total_rate_mass > 0 else INF

    times, masses = [0.0], [m0]
    snapshots: Dict[float, np.ndarray] = {}
    pending = sorted(s for s in stops if 0.0 <= s <= horizon)
    if m0 <= 0:
        # numerically extinct: the flow stays zero and no clock can cross
        for s in pending:
            snapshots[s] = values.copy()
        return ClockCrossing(None, 0.0, values, [0.0, horizon], [0.0, 0.0], snapshots)
    while pending and pending[0] <= 0.0:
        snapshots[pending.pop(0)] = values.copy()

    t, integral, k = 0.0, 0.0, 0
    eps = 1e-12 * max(horizon, 1.0)
    while horizon - t > eps:
        tau = min(solver.nominal_step(k), horizon - t)
        if pending:
            tau = min(tau, pending[0] - t)
        new = solver.step(values, tau, k)
        m1 = dx * new.sum()
        increment = 0.5 * tau * (m0 + m1)

        if integral + increment >= target:
            need = target - integral
            lo, hi = 0.0, tau
            while hi - lo > clock_tol * (t + hi):
                mid = 0.5 * (lo + hi)
                trial = solver.step(values, mid, k)
                if 0.5 * mid * (m0 + dx * trial.sum()) >= need:
                    hi = mid
                else:
                    lo = mid
            new = solver.step(values, hi, k)
            m1 = dx * new.sum()
            integral += 0.5 * hi * (m0 + m1)
            t += hi
            times.append(t)
            masses.append(m1)
            return ClockCrossing(t, integral, new, times, masses, snapshots)

        values, m0 = new, m1
        integral += increment
        t += tau
        k += 1
        times.append(t)
        masses.append(m1)
        while pending and pending[0] - t <= eps:
            snapshots[pending.pop(0)] = values.copy()

    return ClockCrossing(None, integral, values, times, masses, snapshots)


def _absorb(state: RegMeasureState, solver: LogLaplaceSolver) -> np.ndarray:
    values = solver.regularize(state.field)
    if state.atoms:
        values = values + solver.regularize(state.atoms)
    return values


@dataclass
class DualPath:
    """One simulated dual path."""
    seed: int
    path_id: int
    level: TruncationLevel
    rate: float
    horizon: float
    jump_times: List[float] = field(default_factory=list)
    locations: List[float] = field(default_factory=list)
    heights: List[float] = field(default_factory=list)
    marks: List[int] = field(default_factory=list)
    clock_levels: List[float] = field(default_factory=list)
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)
    final_values: Optional[np.ndarray] = None
    parity: int = 1

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def J(self, t: float) -> int:
        """#{k: T_k <= t, M_k = 2}."""
        return sum(1 for time, mark in zip(self.jump_times, self.marks) if time <= t and mark == 2)

    def sign(self, t: Optional[float] = None) -> int:
        return -1 if self.J(self.horizon if t is None else t) % 2 else 1

    def jumps_before(self, t: float) -> int:
        return sum(1 for time in self.jump_times if time <= t)

    def integrated_mass(self, t: Optional[float] = None) -> float:
        return integrated_mass(self, self.horizon if t is None else t)

    def transformed_gaps(self) -> np.ndarray:
        """rate * int <Y_s,1> ds between consecutive jumps, recomputed from the mass record."""
        if not self.jump_times:
            return np.empty(0)
        marks = [0.0] + list(self.jump_times)
        cumulative = np.array([integrated_mass(self, t) for t in marks])
        return self.rate * np.diff(cumulative)

    def jump_records(self) -> List[dict]:
        return [
            {
                "path": self.path_id,
                "k": k + 1,
                "time": time,
                "location": location,
                "height": height,
                "mark": mark,
                "clock": clock,
            }
            for k, (time, location, height, mark, clock) in enumerate(
                zip(self.jump_times, self.locations, self.heights, self.marks, self.clock_levels)
            )
        ]


def integrated_mass(path: DualPath, t: float) -> float:
    """
    int_0^t <Y_s, 1> ds from the piecewise-linear mass record.

    At jump times the record holds the pre- and post-jump masses at the same
    time, so the integrand jumps there.
    """
    if t < 0 or t > path.horizon * (1 + 1e-12):
        raise PreconditionError(f"t={t} outside [0, {path.horizon}]")
    times, masses = path.times, path.masses
    if t <= 0 or times.size < 2:
        return 0.0
    k = int(np.searchsorted(times, t, side="right"))
    dt = np.diff(times[:k])
    total = float(0.5 * np.sum(dt * (masses[1:k] + masses[:k - 1])))
    if k < times.size and t > times[k - 1]:
        span = times[k] - times[k - 1]
        w = (t - times[k - 1]) / span
        m_t = masses[k - 1] + w * (masses[k] - masses[k - 1])
        total += 0.5 * (t - times[k - 1]) * (masses[k - 1] + m_t)
    return total


@dataclass
class DualSimulator:
    """Simulates dual paths for one drift, level and solver configuration."""
    drift: DriftSpec
    solver: LogLaplaceSolver
    level: TruncationLevel = INFINITE_LEVEL
    clock_tol: float = CLOCK_TOL
    max_jumps: int = MAX_JUMPS

    @property
    def rate(self) -> float:
        return self.drift.total_rate(self.level)

    def simulate(self, Y0: InitialData, horizon: float, seed: int, path_id: int = 0,
                 snapshot_times: Sequence[float] = (),
                 rng: Optional[np.random.Generator] = None) -> DualPath:
        if not horizon > 0:
            raise PreconditionError("horizon must be > 0")
        rng = rng or path_stream(seed, path_id, Stream.DUAL)
        grid = self.solver.grid
        rate = self.rate
        path = DualPath(seed=seed, path_id=path_id, level=self.level, rate=rate, horizon=horizon)

        if isinstance(Y0, Field):
            state = RegMeasureState(Y0)
        else:
            atoms = [(float(x), float(m)) for x, m in Y0]
            if any(math.isinf(m) for _, m in atoms) and not self.level.is_infinite:
                raise PreconditionError("infinite atoms need level infinity")
            state = RegMeasureState(grid.zeros(), atoms)
        if state.is_zero():
            raise PreconditionError("dual process needs a nonzero initial state")

        times: List[float] = []
        masses: List[float] = []
        t0 = 0.0
        while True:
            clock = float(rng.exponential()) if rate > 0 else INF
            stops = [s - t0 for s in snapshot_times if t0 <= s <= horizon]
            crossing = next_jump_time(state, clock, rate, solver=self.solver,
                                      horizon=horizon - t0, stops=stops, clock_tol=self.clock_tol)
            _extend(times, masses, t0, crossing)
            for local, snap in crossing.snapshots.items():
                path.snapshots[round(t0 + local, 12)] = snap

            if crossing.horizon_exceeded:
                path.final_values = crossing.values
                break

            jump_time = t0 + crossing.time
            before = Field(grid, crossing.values)
            location = sample_jump_location(rng, before)
            mark = sample_jump_mark(rng, self.drift, self.level)
            height = sample_jump_height(rng, mark, self.drift, self.level)
            state = apply_jump(RegMeasureState(before), location, height, self.level)

            path.jump_times.append(jump_time)
            path.locations.append(location)
            path.heights.append(height)
            path.marks.append(mark)
            path.clock_levels.append(clock)
            if mark == 2:
                path.parity = -path.parity

            post = _absorb(state, self.solver)
            state = RegMeasureState(Field(grid, post))
            times.append(jump_time)
            masses.append(grid.dx * post.sum())
            t0 = jump_time

            if path.n_jumps >= self.max_jumps:
                raise NumericalAbort(
                    f"dual path {path_id} exceeded {self.max_jumps} jumps",
                    {"seed": seed, "path_id": path_id, "time": jump_time, "level": str(self.level)},
                )
            if horizon - t0 <= 1e-12 * max(horizon, 1.0):
                path.final_values = post
                break

        path.times = np.asarray(times)
        path.masses = np.asarray(masses)
        logger.debug(f"Dual path {path_id}: {path.n_jumps} jumps, J(T)={path.J(horizon)}")
        return path


def _extend(times: List[float], masses: List[float], t0: float, crossing: ClockCrossing):
    for local, m in zip(crossing.times, crossing.masses):
        if times and local == 0.0:
            # segment start repeats the post-jump entry already recorded
            continue
        times.append(t0 + local)
        masses.append(m)


def simulate_dual(Y0: InitialData, horizon: float, level: TruncationLevel, dt: float, seed: int, *,
                  drift: DriftSpec, solver: LogLaplaceSolver, path_id: int = 0,
                  snapshot_times: Sequence[float] = (), clock_tol: float = CLOCK_TOL,
                  max_jumps: int = MAX_JUMPS) -> DualPath:
    """Simulate one dual path; reproducible from (seed, path_id)."""
    if dt != solver.dt:
        solver = LogLaplaceSolver(grid=solver.grid, dt=dt, theta=solver.theta,
                                  startup_steps=solver.startup_steps, grading=solver.grading,
                                  eps_w=solver.eps_w, profile=solver.profile)
    simulator = DualSimulator(drift=drift, solver=solver, level=TruncationLevel.parse(level),
                              clock_tol=clock_tol, max_jumps=max_jumps)
    return simulator.simulate(Y0, horizon, seed, path_id, snapshot_times)


def _simulate_chunk(task) -> List[DualPath]:
    simulator, Y0, horizon, seed, ids = task
    return [simulator.simulate(Y0, horizon, seed, pid) for pid in ids]


def simulate_dual_paths(simulator: DualSimulator, Y0: InitialData, horizon: float, seed: int,
                        path_ids: Sequence[int], *, chunk: int = 64, workers: int = 1) -> List[DualPath]:
    """Paths for the given ids, in id order, possibly across worker processes."""
    Y0 = Y0 if isinstance(Y0, Field) else [tuple(atom) for atom in Y0]
    tasks = [(simulator, Y0, horizon, seed, list(ids)) for ids in chunked(list(path_ids), chunk)]
    return [path for part in map_ordered(_simulate_chunk, tasks, workers) for path in part]


def first_jump_uniforms(simulator: DualSimulator, Y0: InitialData, horizon: float,
                        paths: Sequence[DualPath]) -> Tuple[np.ndarray, float]:
    """
    Probability-integral transform of the first jump times.

    Before its first jump every path follows the same deterministic flow of Y0,
    so P(T1 <= t) = 1 - exp(-rate * M(t)) with M(t) = int_0^t <V_s(Y0), 1> ds.
    Returns F(T1) / F(horizon) for the paths that jumped, which is Uniform(0, 1),
    together with F(horizon), the probability of at least one jump.
    """
    solver = simulator.solver
    _, times, masses = solver.flow(solver.regularize(Y0), horizon, record=True)
    cumulative = cumulative_trapezoid(masses, times, initial=0.0)
    rate = simulator.rate
    p_jump = float(-np.expm1(-rate * cumulative[-1]))
    firsts = np.array([p.jump_times[0] for p in paths if p.jump_times], dtype=float)
    if firsts.size == 0 or p_jump == 0.0:
        return np.empty(0), p_jump
    return -np.expm1(-rate * np.interp(firsts, times, cumulative)) / p_jump, p_jump


def pair_with(path: DualPath, X0: Field) -> float:
    """<X0, Y_T> for the state at the horizon."""
    return float(X0.grid.dx * np.dot(X0.values, path.final_values))


def duality_functional(path: DualPath, X0: Field, a: float) -> float:
    """(-1)^{J_T} exp(-<X0, Y_T> - a int_0^T <Y_s, 1> ds)."""
    return path.sign() * math.exp(-pair_with(path, X0) - a * integrated_mass(path, path.horizon))
