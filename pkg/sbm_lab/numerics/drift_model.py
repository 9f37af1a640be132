"""
Admissible drifts h = h_1 + h_inf, their dual parameters (d1, d2, a) and the
jump samplers of the dual process.

A drift is given by two finite measures nu1, nu2 on (0, inf) and the boundary
values b0 = h_inf(0), b1 = h_inf(x > 0):

    h(x) = int e^{-lam x} (nu2 - nu1)(dlam) + b0 1_{x=0} + b1 1_{x>0}

Measures are finite mixtures of point atoms and piecewise-constant densities,
which keeps masses, Laplace transforms and inverse-CDF sampling exact.
"""
import math
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Tuple, Union

import numpy as np

from sbm_lab.core.errors import ConfigError, PreconditionError

logger = logging.getLogger(__name__)

# Admissibility slack for b0 >= <nu1 - nu2, 1> when masses come out of sums
ADMISSIBILITY_TOL = 1e-12

# Upper bound on (evaluation points x components) held in memory at once
_CHUNK_ELEMENTS = 1 << 22

Number = Union[float, np.ndarray]


def _output(values: np.ndarray, like: np.ndarray) -> Number:
    if like.ndim == 0:
        return float(values.reshape(()))
    return values.reshape(like.shape)


@dataclass(frozen=True)
class MeasureSpec:
    """
    A finite measure on (0, inf): point atoms plus a piecewise-constant density.

    Attributes:
        atoms: (lam, weight) pairs with lam > 0 and weight >= 0.
        breakpoints: strictly increasing b_0 < ... < b_m with b_0 >= 0.
        values: density value on each piece (b_j, b_{j+1}].
    """
    atoms: Tuple[Tuple[float, float], ...] = ()
    breakpoints: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple((float(l), float(w)) for l, w in self.atoms))
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

        for lam, weight in self.atoms:
            if not (lam > 0 and math.isfinite(lam)):
                raise PreconditionError(f"atom location must be finite and > 0, got {lam}")
            if not (weight >= 0 and math.isfinite(weight)):
                raise PreconditionError(f"atom weight must be finite and >= 0, got {weight}")

        if self.breakpoints or self.values:
            if len(self.breakpoints) != len(self.values) + 1:
                raise PreconditionError("density needs len(breakpoints) == len(values) + 1")
            edges = np.asarray(self.breakpoints)
            if edges[0] < 0 or not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
                raise PreconditionError("density breakpoints must be finite, >= 0 and strictly increasing")
            dens = np.asarray(self.values)
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise PreconditionError("density values must be finite and >= 0")

    @classmethod
    def from_arrays(cls, atom_locations=(), atom_weights=(), breakpoints=(), values=()) -> "MeasureSpec":
        atoms = tuple(zip(np.asarray(atom_locations, dtype=float).tolist(),
                          np.asarray(atom_weights, dtype=float).tolist()))
        return cls(atoms=atoms,
                   breakpoints=tuple(np.asarray(breakpoints, dtype=float).tolist()),
                   values=tuple(np.asarray(values, dtype=float).tolist()))

    @cached_property
    def _atom_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.atoms:
            return np.empty(0), np.empty(0)
        locs, weights = zip(*self.atoms)
        return np.asarray(locs), np.asarray(weights)

    @cached_property
    def _piece_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.values:
            return np.empty(0), np.empty(0), np.empty(0)
        edges = np.asarray(self.breakpoints)
        return edges[:-1], np.diff(edges), np.asarray(self.values)

    @cached_property
    def _component_masses(self) -> np.ndarray:
        _, weights = self._atom_arrays
        _, width, dens = self._piece_arrays
        return np.concatenate([weights, width * dens])

    @property
    def is_zero(self) -> bool:
        return self.total_mass() == 0.0

    def total_mass(self) -> float:
        """<nu, 1>."""
        return float(self._component_masses.sum())

    def restrict(self, n: float) -> "MeasureSpec":
        """The restriction nu|(0, n]."""
        atoms = tuple((lam, w) for lam, w in self.atoms if lam <= n)
        if not self.values or self.breakpoints[0] >= n:
            return MeasureSpec(atoms=atoms)
        edges, vals = [], []
        for j, value in enumerate(self.values):
            lo, hi = self.breakpoints[j], self.breakpoints[j + 1]
            if lo >= n:
                break
            if not edges:
                edges.append(lo)
            edges.append(min(hi, n))
            vals.append(value)
        return MeasureSpec(atoms=atoms, breakpoints=tuple(edges), values=tuple(vals))

    def laplace(self, x: Number) -> Number:
        """int e^{-lam x} nu(dlam), exact for atoms and piecewise-constant pieces."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.zeros(flat.shape)
        locs, weights = self._atom_arrays
        left, width, dens = self._piece_arrays
        n_components = locs.size + left.size
        if n_components == 0:
            return _output(out, x)

        step = max(1, _CHUNK_ELEMENTS // n_components)
        for start in range(0, flat.size, step):
            xs = flat[start:start + step, None]
            acc = np.zeros(xs.shape[0])
            if locs.size:
                acc += np.exp(-xs * locs) @ weights
            if left.size:
                positive = xs > 0
                safe = np.where(positive, xs, 1.0)
                # int_{b}^{b+w} e^{-lam x} dlam = e^{-b x} (1 - e^{-w x}) / x
                frac = np.where(positive, -np.expm1(-safe * width) / safe, width)
                acc += (dens * np.exp(-xs * left) * frac).sum(axis=1)
            out[start:start + step] = acc
        return _output(out, x)

    def cdf(self, lam: Number) -> Number:
        """Normalized distribution function nu((0, lam]) / <nu, 1>."""
        total = self.total_mass()
        if total <= 0:
            raise PreconditionError("cdf of a zero measure")
        lam = np.asarray(lam, dtype=float)
        flat = lam.reshape(-1)
        locs, weights = self._atom_arrays
        left, width, dens = self._piece_arrays
        acc = np.zeros(flat.shape)
        if locs.size:
            acc += (flat[:, None] >= locs) @ weights
        if left.size:
            covered = np.clip(flat[:, None] - left, 0.0, width)
            acc += covered @ dens
        return _output(acc / total, lam)

    def sample(self, rng: np.random.Generator) -> float:
        """Draw one variate from the normalized measure by inverse CDF."""
        masses = self._component_masses
        total = masses.sum()
        if total <= 0:
            raise PreconditionError("cannot sample from a zero measure")
        cumulative = np.cumsum(masses)
        u_component, u_position = rng.random(2)
        k = int(np.searchsorted(cumulative, u_component * total, side="right"))
        k = min(k, masses.size - 1)
        locs, _ = self._atom_arrays
        if k < locs.size:
            return float(locs[k])
        left, width, _ = self._piece_arrays
        j = k - locs.size
        # (b, b + w], avoid returning the open left edge
        return float(left[j] + width[j] * (1.0 - u_position))


@dataclass(frozen=True)
class TruncationLevel:
    """Truncation level n of the dual construction; ``n=None`` is the level infinity."""
    n: Optional[int] = None

    def __post_init__(self):
        if self.n is not None and self.n <= 0:
            raise PreconditionError(f"truncation level must be positive, got {self.n}")

    @classmethod
    def parse(cls, value: Any) -> "TruncationLevel":
        if isinstance(value, TruncationLevel):
            return value
        if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity")):
            return cls(None)
        if isinstance(value, float) and math.isinf(value):
            return cls(None)
        return cls(int(value))

    @property
    def is_infinite(self) -> bool:
        return self.n is None

    @property
    def value(self) -> float:
        return math.inf if self.n is None else float(self.n)

    def __str__(self) -> str:
        return "infinity" if self.n is None else str(self.n)


INFINITE_LEVEL = TruncationLevel(None)


def derive_params(b0: float, b1: float, nu1: MeasureSpec, nu2: MeasureSpec) -> Tuple[float, float, float]:
    """
    Map boundary values (b0, b1) to the dual parameters (d1, d2, a).

    Raises PreconditionError when h(0) = <nu2 - nu1, 1> + b0 would be negative,
    and when b0 < 0 together with b0 < b1, which leaves no nonnegative (d1, d2).
    """
    m1, m2 = nu1.total_mass(), nu2.total_mass()
    if b0 < m1 - m2 - ADMISSIBILITY_TOL * max(1.0, m1 + m2):
        raise PreconditionError(
            f"inadmissible drift: b0={b0} < <nu1 - nu2, 1>={m1 - m2} makes h(0) negative"
        )
    if b0 < b1:
        if b0 < 0:
            raise PreconditionError(f"inadmissible drift: b0={b0} < 0 with b0 < b1={b1} gives d2 = b0/2 < 0")
        return b1 - b0 / 2.0, b0 / 2.0, -(m1 + m2)
    return 0.0, b0 - b1, 2.0 * b1 - b0 - (m1 + m2)


@dataclass(frozen=True)
class DriftSpec:
    """An admissible drift with its derived dual parameters."""
    nu1: MeasureSpec = field(default_factory=MeasureSpec)
    nu2: MeasureSpec = field(default_factory=MeasureSpec)
    b0: float = 0.0
    b1: float = 0.0
    label: str = ""
    d1: float = field(init=False)
    d2: float = field(init=False)
    a: float = field(init=False)

    def __post_init__(self):
        d1, d2, a = derive_params(self.b0, self.b1, self.nu1, self.nu2)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)
        object.__setattr__(self, "a", a)
        if not self.label:
            object.__setattr__(self, "label", f"h[b0={self.b0:g},b1={self.b1:g}]")

    @property
    def has_measures(self) -> bool:
        return bool(self.nu1.atoms or self.nu1.values or self.nu2.atoms or self.nu2.values)

    def measure(self, mark: int) -> MeasureSpec:
        if mark == 1:
            return self.nu1
        if mark == 2:
            return self.nu2
        raise PreconditionError(f"jump mark must be 1 or 2, got {mark}")

    def d(self, mark: int) -> float:
        return self.d1 if mark == 1 else self.d2

    def mark_weights(self, level: TruncationLevel = INFINITE_LEVEL) -> Tuple[float, float]:
        """(nu1_n((0, inf]), nu2_n((0, inf])) including the d-atoms at n."""
        if level.is_infinite:
            return self.nu1.total_mass() + self.d1, self.nu2.total_mass() + self.d2
        n = level.value
        return (self.nu1.restrict(n).total_mass() + self.d1,
                self.nu2.restrict(n).total_mass() + self.d2)

    def total_rate(self, level: TruncationLevel = INFINITE_LEVEL) -> float:
        """nu_bar = nu_n((0, inf]), the clock rate of the dual process."""
        w1, w2 = self.mark_weights(level)
        return w1 + w2

    def h1(self, x: Number) -> Number:
        """The continuous part int e^{-lam x}(nu2 - nu1)(dlam)."""
        return self.nu2.laplace(x) - self.nu1.laplace(x)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "b0": self.b0, "b1": self.b1,
            "d1": self.d1, "d2": self.d2, "a": self.a,
            "nu1_mass": self.nu1.total_mass(),
            "nu2_mass": self.nu2.total_mass(),
        }


def _check_nonneg(x: np.ndarray):
    if np.any(x < 0):
        raise PreconditionError("drift evaluated at a negative argument")


def _zero_mask(x: np.ndarray, zero_threshold: float) -> np.ndarray:
    if zero_threshold > 0:
        return x <= zero_threshold
    return x == 0


def eval_drift(x: Number, spec: DriftSpec, zero_threshold: float = 0.0) -> Number:
    """h(x); values at or below ``zero_threshold`` count as the tie x = 0."""
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    at_zero = _zero_mask(x, zero_threshold)
    h_inf = np.where(at_zero, spec.b0, spec.b1)
    if spec.has_measures:
        h_inf = h_inf + np.asarray(spec.h1(x))
    return _output(np.asarray(h_inf, dtype=float), x)


def reconstruct_h_infinity(x: Number, spec: DriftSpec) -> Number:
    """2 d2 1_{x=0} + (d1 + d2) 1_{x>0} + <nu1 + nu2, 1> + a."""
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    masses = spec.nu1.total_mass() + spec.nu2.total_mass()
    values = np.where(x == 0, 2.0 * spec.d2, spec.d1 + spec.d2) + masses + spec.a
    return _output(values, x)


def eval_drift_dual_form(x: Number, spec: DriftSpec) -> Number:
    """
    The drift in the representation the dual process is built on:

        int (1 - e^{-lam x}) nu1 + int (1 + e^{-lam x}) nu2
            + d1 1_{x>0} + d2 (1 + 1_{x=0}) + a
    """
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    at_zero = x == 0
    values = (spec.nu1.total_mass() - np.asarray(spec.nu1.laplace(x))
              + spec.nu2.total_mass() + np.asarray(spec.nu2.laplace(x))
              + np.where(at_zero, 0.0, spec.d1)
              + spec.d2 * np.where(at_zero, 2.0, 1.0)
              + spec.a)
    return _output(values, x)


def eval_drift_truncated(x: Number, spec: DriftSpec, level: Union[TruncationLevel, int]) -> Number:
    """
    h_n(x), the drift whose dual uses nu_n = nu|(0,n] + (d1 + d2) delta_n.

    Continuous in x for every finite n and converging pointwise to h.
    """
    level = TruncationLevel.parse(level)
    if level.is_infinite:
        raise PreconditionError("eval_drift_truncated needs a finite level")
    x = np.asarray(x, dtype=float)
    _check_nonneg(x)
    n = level.value
    nu1, nu2 = spec.nu1.restrict(n), spec.nu2.restrict(n)
    decay = np.exp(-n * x)
    values = (nu1.total_mass() - np.asarray(nu1.laplace(x))
              + nu2.total_mass() + np.asarray(nu2.laplace(x))
              + spec.d1 * (1.0 - decay)
              + spec.d2 * (1.0 + decay)
              + spec.a)
    return _output(values, x)


def sample_jump_mark(rng: np.random.Generator, spec: DriftSpec,
                     level: TruncationLevel = INFINITE_LEVEL) -> int:
    """Jump type: P(mark = i) proportional to nu^i_n((0, inf)) + d_i."""
    w1, w2 = spec.mark_weights(level)
    total = w1 + w2
    if total <= 0:
        raise PreconditionError("no jumps possible: total jump measure is zero")
    return 1 if rng.random() * total < w1 else 2


def sample_jump_height(rng: np.random.Generator, mark: int, spec: DriftSpec,
                       level: TruncationLevel = INFINITE_LEVEL) -> float:
    """
    Jump height given the mark.

    With probability d_mark / (<nu^mark, 1> + d_mark) the height is the level n
    (math.inf at level infinity); otherwise it is drawn from nu^mark.
    """
    measure = spec.measure(mark)
    if not level.is_infinite:
        measure = measure.restrict(level.value)
    d = spec.d(mark)
    mass = measure.total_mass()
    total = mass + d
    if total <= 0:
        raise PreconditionError(f"mark {mark} has zero jump mass")
    if rng.random() * total < d:
        return level.value
    return measure.sample(rng)


@dataclass(frozen=True)
class TabulatedDrift:
    """
    Fast evaluation of a drift with many measure components.

    The smooth part h_1 is interpolated on a geometric table; the jump part
    and the tie at zero are applied exactly.
    """
    spec: DriftSpec
    x_table: np.ndarray
    h1_table: np.ndarray

    def __call__(self, x: np.ndarray, zero_threshold: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h1 = np.interp(x, self.x_table, self.h1_table)
        beyond = x > self.x_table[-1]
        if np.any(beyond):
            h1[beyond] = self.spec.h1(x[beyond])
        return h1 + np.where(_zero_mask(x, zero_threshold), self.spec.b0, self.spec.b1)


def tabulate_drift(spec: DriftSpec, x_max: float, points: int = 4096) -> TabulatedDrift:
    x_table = np.concatenate([[0.0], np.geomspace(1e-12, x_max, points)])
    return TabulatedDrift(spec=spec, x_table=x_table, h1_table=np.asarray(spec.h1(x_table)))


# ---------------------------------------------------------------------------
# Drift catalog

def step_drift(b0: float, b1: float) -> DriftSpec:
    """h_{b0,b1}(x) = b0 1_{x=0} + b1 1_{x>0}."""
    return DriftSpec(b0=b0, b1=b1, label=f"h[{b0:g},{b1:g}]")


def immigration_drift(a: float) -> DriftSpec:
    """Constant immigration h = a."""
    if a < 0:
        raise PreconditionError("immigration rate must be >= 0")
    return DriftSpec(b0=a, b1=a, label=f"immigration[{a:g}]")


def zero_drift() -> DriftSpec:
    return DriftSpec(label="zero")


def holder_drift(alpha: float, lam_max: float = 1e6, bins: int = 2000) -> DriftSpec:
    """
    h(x) = int_1^inf (1 - e^{-lam x}) lam^{-1-alpha} dlam, alpha-Hoelder at 0.

    nu1 has density lam^{-1-alpha} on [1, lam_max], tabulated on geometric bins
    with the exact mass of each bin; the tail mass beyond lam_max sits in an atom
    at lam_max. b0 = b1 = <nu1, 1> = 1/alpha so that h(0) = 0.
    """
    if not 0 < alpha < 1:
        raise PreconditionError("alpha must lie in (0, 1)")
    if lam_max <= 1 or bins < 1:
        raise PreconditionError("need lam_max > 1 and bins >= 1")
    edges = np.geomspace(1.0, lam_max, bins + 1)
    bin_mass = (edges[:-1] ** -alpha - edges[1:] ** -alpha) / alpha
    nu1 = MeasureSpec.from_arrays(
        atom_locations=[lam_max],
        atom_weights=[lam_max ** -alpha / alpha],
        breakpoints=edges,
        values=bin_mass / np.diff(edges),
    )
    mass = nu1.total_mass()
    return DriftSpec(nu1=nu1, b0=mass, b1=mass, label=f"holder[{alpha:g}]")


def completely_monotone_drift(nu1: MeasureSpec, nu2: MeasureSpec) -> DriftSpec:
    """h = int e^{-lam x}(nu2 - nu1)(dlam), continuous with h(0) >= 0."""
    return DriftSpec(nu1=nu1, nu2=nu2, b0=0.0, b1=0.0, label="completely_monotone")


def measure_from_config(cfg: Any) -> MeasureSpec:
    if cfg is None:
        return MeasureSpec()
    density = cfg.density
    return MeasureSpec(
        atoms=tuple((a.lam, a.weight) for a in cfg.atoms),
        breakpoints=tuple(density.breakpoints) if density else (),
        values=tuple(density.values) if density else (),
    )


def drift_from_config(cfg: Any) -> Tuple[DriftSpec, TruncationLevel]:
    """Build the drift and truncation level described by a ``DriftConfig``."""
    level = TruncationLevel.parse(cfg.level)
    try:
        if cfg.preset == "zero":
            spec = zero_drift()
        elif cfg.preset == "step":
            spec = step_drift(cfg.b0, cfg.b1)
        elif cfg.preset == "immigration":
            spec = immigration_drift(cfg.a)
        elif cfg.preset == "holder":
            spec = holder_drift(cfg.alpha, cfg.lam_max, cfg.bins)
        elif cfg.preset == "completely_monotone":
            spec = completely_monotone_drift(measure_from_config(cfg.nu1),
                                             measure_from_config(cfg.nu2))
        else:
            spec = DriftSpec(nu1=measure_from_config(cfg.nu1),
                             nu2=measure_from_config(cfg.nu2),
                             b0=cfg.b0, b1=cfg.b1)
    except PreconditionError as e:
        raise ConfigError("drift", str(e)) from e
    logger.debug(f"Drift {spec.label}: d1={spec.d1} d2={spec.d2} a={spec.a} level={level}")
    return spec, level
