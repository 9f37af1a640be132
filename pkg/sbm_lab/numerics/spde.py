"""
Explicit Euler-Maruyama for dX = 1/2 Laplace X + h(X) + sqrt(X) dW on a grid.

    X_i <- X_i + dt (1/2 Lap_h X_i + h(X_i)) + sqrt(dt/dx) sqrt(X_i) xi_i

with Dirichlet-zero boundary nodes and negatives clipped to zero. Paths are
simulated in batches, each path drawing its noise from its own stream, so a
batch with a different drift but the same (seed, path ids) sees the same noise.

Each step records a mass ledger: boundary outflow, drift input and clipped
mass, so that mass - sum(clipped) + sum(flux) - sum(drift) equals the initial
mass plus a martingale.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sbm_lab.core.errors import ConfigError, NumericalAbort, PreconditionError
from sbm_lab.numerics.drift_model import (
    DriftSpec,
    TruncationLevel,
    eval_drift,
    eval_drift_truncated,
    tabulate_drift,
    zero_drift,
)
from sbm_lab.numerics.grid import Field, Grid1D
from sbm_lab.utils.parallel import chunked, map_ordered
from sbm_lab.utils.rng import Stream, path_streams

logger = logging.getLogger(__name__)

# Drifts with more measure components than this are evaluated from a table
TABLE_THRESHOLD = 64


@dataclass(frozen=True)
class SpdeParams:
    grid: Grid1D
    dt: float
    horizon: float
    drift: DriftSpec = field(default_factory=zero_drift)
    level: Optional[TruncationLevel] = None
    zero_threshold: float = 0.0
    noise_scale: float = 1.0
    seed: int = 0
    snapshot_times: Tuple[float, ...] = ()

    def __post_init__(self):
        limit = 0.5 * self.grid.dx ** 2
        if not 0 < self.dt <= limit * (1 + 1e-12):
            raise ConfigError("dt", f"explicit scheme needs 0 < dt <= dx^2/2 = {limit!r}, got {self.dt!r}")
        if not self.horizon > 0:
            raise ConfigError("horizon", "horizon must be > 0")
        if self.zero_threshold < 0:
            raise ConfigError("zero_threshold", "must be >= 0")
        if self.level is not None and self.level.is_infinite:
            object.__setattr__(self, "level", None)

    @property
    def steps(self) -> int:
        return max(1, int(math.ceil(self.horizon / self.dt - 1e-9)))

    @property
    def step_size(self) -> float:
        return self.horizon / self.steps

    def snapshot_steps(self) -> Dict[int, float]:
        return {int(round(t / self.step_size)): t for t in self.snapshot_times if 0 <= t <= self.horizon}

    def with_dt(self, dt: float) -> "SpdeParams":
        return SpdeParams(self.grid, dt, self.horizon, self.drift, self.level, self.zero_threshold,
                          self.noise_scale, self.seed, self.snapshot_times)

    def with_drift(self, drift: DriftSpec, level: Optional[TruncationLevel] = None) -> "SpdeParams":
        return SpdeParams(self.grid, self.dt, self.horizon, drift, level, self.zero_threshold,
                          self.noise_scale, self.seed, self.snapshot_times)


def drift_evaluator(params: SpdeParams) -> Callable[[np.ndarray], np.ndarray]:
    spec, threshold = params.drift, params.zero_threshold
    if params.level is not None:
        level = params.level
        return lambda x: eval_drift_truncated(x, spec, level)
    if not spec.has_measures:
        return lambda x: np.where(x <= threshold if threshold > 0 else x == 0, spec.b0, spec.b1)
    components = (len(spec.nu1.atoms) + len(spec.nu1.values)
                  + len(spec.nu2.atoms) + len(spec.nu2.values))
    if components > TABLE_THRESHOLD:
        table = tabulate_drift(spec, x_max=100.0)
        return lambda x: table(x, threshold)
    return lambda x: eval_drift(x, spec, threshold)


@dataclass
class StepDiagnostics:
    flux: np.ndarray
    drift_input: np.ndarray
    clipped: np.ndarray
    min_before_clip: np.ndarray
    negative_part: np.ndarray


def euler_step(X: np.ndarray, dt: float, dx: float, drift: Callable[[np.ndarray], np.ndarray],
               xi: np.ndarray, noise_scale: float = 1.0) -> Tuple[np.ndarray, StepDiagnostics]:
    """One scheme step for a (paths, nodes) array; boundary columns stay zero."""
    interior = X[:, 1:-1]
    lap = (X[:, :-2] - 2.0 * interior + X[:, 2:]) / (dx * dx)
    h = drift(interior)
    new = np.zeros_like(X)
    new[:, 1:-1] = (interior + dt * (0.5 * lap + h)
                    + noise_scale * math.sqrt(dt / dx) * np.sqrt(interior) * xi[:, 1:-1])

    flux = 0.5 * dt / dx * (X[:, 1] + X[:, -2] - X[:, 0] - X[:, -1])
    drift_input = dt * dx * np.broadcast_to(h, interior.shape).sum(axis=1)
    min_before_clip = new[:, 1:-1].min(axis=1)
    negative_part = -np.minimum(new, 0.0)
    clipped = dx * negative_part.sum(axis=1)
    np.maximum(new, 0.0, out=new)
    return new, StepDiagnostics(flux, drift_input, clipped, min_before_clip, negative_part)


@dataclass
class SpdePath:
    """One simulated path with its snapshots and per-step diagnostics."""
    path_id: int
    grid: Grid1D
    dt: float
    final: Field
    snapshots: Dict[float, Field]
    mass: np.ndarray
    clipped_mass: np.ndarray
    boundary_flux: np.ndarray
    drift_input: np.ndarray
    min_before_clip: np.ndarray
    zero_occupation: float

    def martingale(self) -> np.ndarray:
        """mass - sum(clipped) + sum(flux) - sum(drift) along the path."""
        return _martingale(self.mass, self.clipped_mass, self.boundary_flux, self.drift_input)

    def diagnostics(self) -> dict:
        return {
            "path": self.path_id,
            "total_clipped_mass": float(self.clipped_mass.sum()),
            "total_boundary_flux": float(self.boundary_flux.sum()),
            "total_drift_input": float(self.drift_input.sum()),
            "min_before_clip": float(self.min_before_clip.min()) if self.min_before_clip.size else 0.0,
            "mass": self.mass,
            "zero_occupation": self.zero_occupation,
        }


def _martingale(mass, clipped, flux, drift_input) -> np.ndarray:
    zeros = np.zeros(mass.shape[:-1] + (1,))

    def cum(a):
        return np.concatenate([zeros, np.cumsum(a, axis=-1)], axis=-1)

    return mass - cum(clipped) + cum(flux) - cum(drift_input)


@dataclass
class SpdeBatch:
    """A batch of paths stored as (paths, ...) arrays."""
    params: SpdeParams
    path_ids: List[int]
    final: np.ndarray
    snapshots: Dict[float, np.ndarray]
    mass: np.ndarray
    clipped_mass: np.ndarray
    boundary_flux: np.ndarray
    drift_input: np.ndarray
    min_before_clip: np.ndarray
    zero_occupation: np.ndarray

    def martingale(self) -> np.ndarray:
        return _martingale(self.mass, self.clipped_mass, self.boundary_flux, self.drift_input)

    def path(self, i: int) -> SpdePath:
        grid = self.params.grid
        return SpdePath(
            path_id=self.path_ids[i],
            grid=grid,
            dt=self.params.step_size,
            final=Field(grid, self.final[i]),
            snapshots={t: Field(grid, v[i]) for t, v in self.snapshots.items()},
            mass=self.mass[i],
            clipped_mass=self.clipped_mass[i],
            boundary_flux=self.boundary_flux[i],
            drift_input=self.drift_input[i],
            min_before_clip=self.min_before_clip[i],
            zero_occupation=float(self.zero_occupation[i]),
        )


def _initial_array(X0: Field, n_paths: int) -> np.ndarray:
    X = np.tile(np.asarray(X0.values, dtype=float), (n_paths, 1))
    X[:, 0] = X[:, -1] = 0.0
    return X


def simulate_spde_batch(X0: Field, params: SpdeParams, path_ids: Sequence[int]) -> SpdeBatch:
    """Simulate the listed paths together; path i uses stream (params.seed, path_ids[i])."""
    if X0.grid != params.grid:
        raise PreconditionError("initial field lives on a different grid")
    grid, dt, dx = params.grid, params.step_size, params.grid.dx
    path_ids = list(path_ids)
    P, steps = len(path_ids), params.steps
    rngs = path_streams(params.seed, path_ids, Stream.SPDE)
    drift = drift_evaluator(params)
    snapshot_steps = params.snapshot_steps()

    X = _initial_array(X0, P)
    mass = np.empty((P, steps + 1))
    clipped = np.empty((P, steps))
    flux = np.empty((P, steps))
    drift_in = np.empty((P, steps))
    min_pre = np.empty((P, steps))
    occupation = np.zeros(P)
    snapshots: Dict[float, np.ndarray] = {}

    mass[:, 0] = dx * X.sum(axis=1)
    if 0 in snapshot_steps:
        snapshots[snapshot_steps[0]] = X.copy()

    for m in range(steps):
        xi = np.stack([g.standard_normal(grid.N) for g in rngs])
        X, diag = euler_step(X, dt, dx, drift, xi, params.noise_scale)
        if not np.all(np.isfinite(X)):
            bad = [path_ids[i] for i in np.flatnonzero(~np.all(np.isfinite(X), axis=1))]
            raise NumericalAbort("non-finite SPDE state", {"step": m + 1, "paths": bad, "seed": params.seed})
        mass[:, m + 1] = dx * X.sum(axis=1)
        clipped[:, m] = diag.clipped
        flux[:, m] = diag.flux
        drift_in[:, m] = diag.drift_input
        min_pre[:, m] = diag.min_before_clip
        occupation += dx * dt * (X[:, 1:-1] == 0).sum(axis=1)
        if m + 1 in snapshot_steps:
            snapshots[snapshot_steps[m + 1]] = X.copy()

    share = clipped.sum() / max(mass[:, 1:].sum(), 1e-300)
    if share > 0.01:
        logger.warning(f"Clipping added {share:.2%} of the total mass; the scheme is in a rough regime")
    logger.debug(f"SPDE batch of {P} paths done: mean final mass {mass[:, -1].mean():.6g}")
    return SpdeBatch(params, path_ids, X, snapshots, mass, clipped, flux, drift_in, min_pre, occupation)


def _batch_task(task) -> SpdeBatch:
    X0, params, ids = task
    return simulate_spde_batch(X0, params, ids)


def merge_batches(batches: Sequence[SpdeBatch]) -> SpdeBatch:
    """Concatenate batches of the same parameters in the given order."""
    first = batches[0]

    def stack(name):
        return np.concatenate([getattr(b, name) for b in batches])

    snapshots = {t: np.concatenate([b.snapshots[t] for b in batches]) for t in first.snapshots}
    return SpdeBatch(first.params, [pid for b in batches for pid in b.path_ids], stack("final"), snapshots,
                     stack("mass"), stack("clipped_mass"), stack("boundary_flux"), stack("drift_input"),
                     stack("min_before_clip"), stack("zero_occupation"))


def simulate_spde_paths(X0: Field, params: SpdeParams, n_paths: int, *, first_path: int = 0,
                        chunk: int = 256, workers: int = 1) -> SpdeBatch:
    """Paths first_path .. first_path + n_paths - 1, chunked over workers; independent of the split."""
    ids = list(range(first_path, first_path + n_paths))
    tasks = [(X0, params, list(part)) for part in chunked(ids, chunk)]
    return merge_batches(map_ordered(_batch_task, tasks, workers))


def simulate_spde(X0: Field, params: SpdeParams, path_id: int = 0) -> SpdePath:
    return simulate_spde_batch(X0, params, [path_id]).path(0)


# ---------------------------------------------------------------------------
# Functionals

def laplace_functional(X: Field, mu: Sequence[Tuple[float, float]]) -> float:
    """exp(-sum_j w_j X(x_j)) with nearest-node evaluation."""
    return float(laplace_functional_batch(X.values[None, :], X.grid, mu)[0])


def laplace_functional_batch(values: np.ndarray, grid: Grid1D, mu: Sequence[Tuple[float, float]]) -> np.ndarray:
    values = np.atleast_2d(values)
    exponent = np.zeros(values.shape[0])
    for location, weight in mu:
        exponent += weight * values[:, grid.nearest_index(location)]
    return np.exp(-exponent)


def ctem_norm(X: Field, lam: float) -> float:
    """max_x e^{lam |x|} X(x) for lam < 0."""
    if not lam < 0:
        raise PreconditionError("ctem_norm needs lam < 0")
    return float(np.max(np.exp(lam * np.abs(X.grid.nodes)) * X.values))


def cozero_measure(X: Field, eps: float = 0.0) -> float:
    """dx * #{i: X_i > eps}."""
    if eps < 0:
        raise PreconditionError("eps must be >= 0")
    return float(X.grid.dx * np.count_nonzero(X.values > eps))


def cozero_laplace_proxy(X: Field, n: float) -> float:
    """dx * sum(1 - e^{-n X_i}); increases to cozero_measure(X, 0) as n grows."""
    return float(X.grid.dx * np.sum(-np.expm1(-n * X.values)))


def zero_probability(values: np.ndarray, grid: Grid1D, x: float) -> Tuple[float, float]:
    """MC estimate of P(X_t(x) = 0) and its binomial standard error."""
    values = np.atleast_2d(values)
    hits = values[:, grid.nearest_index(x)] == 0
    p = float(hits.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / max(hits.size, 1))


def zero_occupation(path: SpdePath) -> float:
    """dx dt sum 1_{X = 0} over interior nodes and steps."""
    return path.zero_occupation


def coupled_domination(X0: Field, dominated: SpdeParams, dominating: SpdeParams,
                       path_ids: Sequence[int]) -> dict:
    """
    Step two drifts with the same noise and measure how far the dominated path
    rises above the dominating one.

    The slack at a node is the mass both paths have had clipped there so far;
    an excess above it counts as a violation.
    """
    if dominated.grid != dominating.grid or dominated.seed != dominating.seed:
        raise PreconditionError("coupled runs need the same grid and seed")
    if dominated.steps != dominating.steps or dominated.step_size != dominating.step_size:
        raise PreconditionError("coupled runs need the same time stepping")
    grid, dt, dx = dominated.grid, dominated.step_size, dominated.grid.dx
    path_ids = list(path_ids)
    rngs = path_streams(dominated.seed, path_ids, Stream.SPDE)
    low_drift, high_drift = drift_evaluator(dominated), drift_evaluator(dominating)

    low = _initial_array(X0, len(path_ids))
    high = low.copy()
    slack = np.zeros_like(low)
    max_excess, violations, checked = 0.0, 0, 0
    mass_violations = 0
    for _ in range(dominated.steps):
        xi = np.stack([g.standard_normal(grid.N) for g in rngs])
        low, low_diag = euler_step(low, dt, dx, low_drift, xi, dominated.noise_scale)
        high, high_diag = euler_step(high, dt, dx, high_drift, xi, dominating.noise_scale)
        slack += low_diag.negative_part + high_diag.negative_part
        excess = low - high - slack
        max_excess = max(max_excess, float(excess.max()))
        violations += int(np.count_nonzero(excess > 1e-12))
        checked += excess.size
        mass_violations += int(np.count_nonzero(low.sum(axis=1) > high.sum(axis=1) + slack.sum(axis=1)))
    return {
        "paths": len(path_ids),
        "node_steps": checked,
        "violations": violations,
        "violation_fraction": violations / max(checked, 1),
        "max_excess": max_excess,
        "mass_violations": mass_violations,
    }

