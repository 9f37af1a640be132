"""
Scalar SDEs dx = h(x) dt + sqrt(x) dB with discontinuous drifts.

These runs produce comparative statistics only; a discrete scheme cannot
certify non-uniqueness or non-existence.
"""
import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from sbm_lab.core.errors import NumericalAbort, PreconditionError
from sbm_lab.numerics.drift_model import DriftSpec, eval_drift, step_drift
from sbm_lab.utils.rng import Stream, path_stream

logger = logging.getLogger(__name__)

TIE = "tie"
ESCAPE = "escape"


@dataclass
class SdePath:
    dt: float
    values: np.ndarray
    label: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)

    @property
    def horizon(self) -> float:
        return self.dt * (self.values.size - 1)


@dataclass
class SdeBatch:
    label: str
    dt: float
    horizon: float
    finals: np.ndarray
    occupation: np.ndarray
    paths: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "label": self.label,
            "paths": int(self.finals.size),
            "mean": float(self.finals.mean()),
            "stderr": float(self.finals.std(ddof=1) / math.sqrt(self.finals.size)) if self.finals.size > 1 else 0.0,
            "zero_fraction": float(np.mean(self.finals == 0)),
            "mean_occupation_at_zero": float(self.occupation.mean()),
        }


def _drift_fn(drift: DriftSpec, zero_policy: str):
    if zero_policy == TIE:
        return lambda x: eval_drift(x, drift)
    if zero_policy == ESCAPE:
        # the tie x = 0 is treated like x > 0
        at_zero = float(eval_drift(1e-300, drift)) if drift.has_measures else drift.b1
        return lambda x: np.where(x == 0, at_zero, eval_drift(x, drift))
    raise PreconditionError(f"unknown zero policy {zero_policy!r}")


def _steps(dt: float, T: float) -> int:
    if not dt > 0 or not T > 0:
        raise PreconditionError("dt and T must be > 0")
    return max(1, int(round(T / dt)))


def _euler(x: np.ndarray, drift, dt: float, increments: np.ndarray, keep: bool, eps: float = 0.0):
    steps = increments.shape[1]
    occupation = np.zeros(x.shape)
    trajectory = np.empty((x.size, steps + 1)) if keep else None
    if keep:
        trajectory[:, 0] = x
    for m in range(steps):
        occupation += dt * (x <= eps)
        x = np.maximum(x + drift(x) * dt + np.sqrt(x) * increments[:, m], 0.0)
        if not np.all(np.isfinite(x)):
            raise NumericalAbort("non-finite SDE state", {"step": m + 1})
        if keep:
            trajectory[:, m + 1] = x
    return x, occupation, trajectory


def simulate_sde(drift: DriftSpec, x0: float, dt: float, T: float, seed: int, path_id: int = 0,
                 *, zero_policy: str = TIE) -> SdePath:
    """Euler-Maruyama with clipping at zero for one path."""
    if x0 < 0:
        raise PreconditionError("x0 must be >= 0")
    steps = _steps(dt, T)
    increments = math.sqrt(dt) * path_stream(seed, path_id, Stream.SDE).standard_normal(steps)
    _, _, trajectory = _euler(np.array([float(x0)]), _drift_fn(drift, zero_policy), dt,
                              increments[None, :], keep=True)
    return SdePath(dt=dt, values=trajectory[0], label=drift.label)


def simulate_sde_batch(drift: DriftSpec, x0: float, dt: float, T: float, seed: int, n_paths: int,
                       *, zero_policy: str = TIE, first_path: int = 0, chunk: int = 4096,
                       keep_paths: bool = False, eps: float = 0.0) -> SdeBatch:
    """Many paths, path i using stream (seed, first_path + i); finals and occupation times."""
    if x0 < 0:
        raise PreconditionError("x0 must be >= 0")
    steps = _steps(dt, T)
    fn = _drift_fn(drift, zero_policy)
    finals, occupation, paths = [], [], []
    for start in range(first_path, first_path + n_paths, chunk):
        ids = range(start, min(start + chunk, first_path + n_paths))
        increments = math.sqrt(dt) * np.stack(
            [path_stream(seed, pid, Stream.SDE).standard_normal(steps) for pid in ids])
        x, occ, traj = _euler(np.full(len(ids), float(x0)), fn, dt, increments, keep_paths, eps)
        finals.append(x)
        occupation.append(occ)
        if keep_paths:
            paths.append(traj)
    label = f"{drift.label}/{zero_policy}"
    return SdeBatch(label=label, dt=dt, horizon=steps * dt, finals=np.concatenate(finals),
                    occupation=np.concatenate(occupation),
                    paths=np.concatenate(paths) if keep_paths else None)


def occupation_time_at_zero(path: SdePath, eps: float = 0.0) -> float:
    """dt * #{m: x_m <= eps} over the steps of the path."""
    return float(path.dt * np.count_nonzero(path.values[:-1] <= eps))


def exact_half_bessel_square(rng: np.random.Generator, t_grid: Sequence[float]) -> np.ndarray:
    """y_t = B_t^2 / 2 at the given increasing times, sampled exactly."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0) or (t_grid.size and t_grid[0] < 0):
        raise PreconditionError("t_grid must be nonnegative and increasing")
    gaps = np.diff(np.concatenate([[0.0], t_grid]))
    brownian = np.cumsum(np.sqrt(gaps) * rng.standard_normal(t_grid.size))
    return 0.5 * brownian ** 2


def half_bessel_square_law(T: float):
    """The law of B_T^2 / 2: chi-square with one degree of freedom scaled by T/2."""
    return stats.chi2(df=1, scale=0.5 * T)


def same_law_comparison(c_values: Sequence[float], x0: float, T: float, dt: float, seed: int,
                        n_paths: int) -> List[dict]:
    """KS distances between the time-T marginals of h_{c,1/2} and of dy = 1/2 dt + sqrt(y) dB."""
    reference = simulate_sde_batch(step_drift(0.5, 0.5), x0, dt, T, seed, n_paths)
    rows = []
    for c in c_values:
        if not 0 <= c <= 0.5:
            raise PreconditionError("c must lie in [0, 1/2]")
        batch = simulate_sde_batch(step_drift(c, 0.5), x0, dt, T, seed, n_paths, first_path=n_paths)
        test = stats.ks_2samp(batch.finals, reference.finals)
        rows.append({
            "c": c,
            "ks_statistic": float(test.statistic),
            "p_value": float(test.pvalue),
            **{k: v for k, v in batch.summary().items() if k != "label"},
        })
        logger.info(f"h[{c:g},1/2] vs h[1/2,1/2]: KS={test.statistic:.4f} p={test.pvalue:.3g}")
    return rows


def two_solution_demo(T: float, dt: float, seed: int, n_paths: int) -> List[dict]:
    """
    dx = 1/2 1_{x>0} dt + sqrt(x) dB from x0 = 0 under both zero policies,
    compared with the exact law of B_T^2 / 2.
    """
    drift = step_drift(0.0, 0.5)
    law = half_bessel_square_law(T)
    rows = []
    for policy in (TIE, ESCAPE):
        batch = simulate_sde_batch(drift, 0.0, dt, T, seed, n_paths, zero_policy=policy)
        test = stats.kstest(batch.finals, law.cdf)
        rows.append({"policy": policy, "ks_to_exact": float(test.statistic),
                     "p_value": float(test.pvalue), **batch.summary()})
    return rows


def nonexistence_demo(dts: Sequence[float], T: float, seed: int, n_paths: int) -> List[dict]:
    """Occupation time at zero for dx = 1_{x=0} dt + sqrt(x) dB as dt shrinks."""
    drift = step_drift(1.0, 0.0)
    rows = []
    for dt in dts:
        batch = simulate_sde_batch(drift, 0.0, dt, T, seed, n_paths)
        rows.append({"dt": dt, **batch.summary()})
    return rows
