"""
The log-Laplace equation d_t V = 1/2 Laplace V - 1/2 V^2 on a truncated grid.

The solver splits the equation (Strang): an exact half step of the reaction
v' = -v^2/2, a Crank-Nicolson step of the half Laplacian with Dirichlet-zero
boundary, and another exact reaction half step. Rough data (grid deltas,
singular warm starts) are handled by two devices:

* graded startup: the first nominal step is split geometrically so the
  reaction never sees a huge spike over a long step;
* Rannacher startup: the first heat steps are replaced by two backward Euler
  half steps, which damps the Crank-Nicolson oscillations on spikes.

The very singular solution W_t(r) = t^{-1} f(|r| / sqrt(t)) is obtained from
its profile ODE 1/2 f'' + 1/2 xi f' + f - 1/2 f^2 = 0, f'(0) = 0, by shooting
on f(0).
"""
import math
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded

from sbm_lab.core.errors import ConfigError, NumericalAbort, PreconditionError, ShootingBracketError
from sbm_lab.numerics.grid import Field, Grid1D
from sbm_lab.utils.io import read_csv, write_csv

logger = logging.getLogger(__name__)

MIN_DT = 1e-9

Atoms = Sequence[Tuple[float, float]]
InitialData = Union[Field, Atoms]


# ---------------------------------------------------------------------------
# Elementary pieces

def heat_kernel(t: float, x):
    """p_t(x) = (2 pi t)^{-1/2} exp(-x^2 / (2t))."""
    if not t > 0:
        raise PreconditionError(f"heat kernel needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    values = np.exp(-x * x / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return float(values) if values.ndim == 0 else values


def _react(values: np.ndarray, tau: float) -> np.ndarray:
    return values / (1.0 + 0.5 * tau * values)


def reaction_substep(v: Field, tau: float) -> Field:
    """Exact flow of v' = -v^2/2 over time tau."""
    if not tau > 0:
        raise PreconditionError("tau must be > 0")
    return Field(v.grid, _react(v.values, tau))


@dataclass
class StepLedger:
    """Mass bookkeeping of the heat steps: outflow through the boundary and mass added by clipping."""
    boundary_flux: float = 0.0
    clipped_mass: float = 0.0
    heat_steps: int = 0

    def as_dict(self) -> dict:
        return {
            "boundary_flux": self.boundary_flux,
            "clipped_mass": self.clipped_mass,
            "heat_steps": self.heat_steps,
        }


def _heat_values(values: np.ndarray, dx: float, tau: float, theta: float,
                 ledger: Optional[StepLedger] = None) -> np.ndarray:
    n = values.size - 2
    r = 0.5 * tau / (dx * dx)
    interior = values[1:-1]
    rhs = interior.copy()
    if theta < 1.0:
        rhs += (1.0 - theta) * r * (values[:-2] - 2.0 * interior + values[2:])

    ab = np.empty((3, n))
    ab[0, :] = -theta * r
    ab[1, :] = 1.0 + 2.0 * theta * r
    ab[2, :] = -theta * r
    try:
        solved = solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NumericalAbort("singular tridiagonal system in heat step",
                             {"tau": tau, "dx": dx, "theta": theta}) from e

    out = np.zeros_like(values)
    out[1:-1] = solved
    flux = dx * (values.sum() - out.sum())
    negative = out < 0
    clipped = 0.0
    if np.any(negative):
        clipped = -dx * out[negative].sum()
        out[negative] = 0.0
    if ledger is not None:
        ledger.boundary_flux += flux
        ledger.clipped_mass += clipped
        ledger.heat_steps += 1
    return out


def heat_substep(v: Field, tau: float, *, theta: float = 0.5,
                 ledger: Optional[StepLedger] = None) -> Field:
    """
    One step of d_t v = 1/2 Laplace v with Dirichlet-zero boundary.

    ``theta=0.5`` is Crank-Nicolson, ``theta=1`` backward Euler. Negative
    values are clipped to zero and the clipped mass is added to ``ledger``.
    """
    if not tau > 0:
        raise PreconditionError("tau must be > 0")
    return Field(v.grid, _heat_values(v.values, v.grid.dx, tau, theta, ledger))


# ---------------------------------------------------------------------------
# Very singular profile

def _profile_rhs(xi, y):
    f, g = y
    return [g, -xi * g - 2.0 * f + f * f]


def _crossing_event(xi, y):
    return y[0]


_crossing_event.terminal = True
_crossing_event.direction = -1


def _blowup_event(xi, y):
    return y[0] - 10.0


_blowup_event.terminal = True
_blowup_event.direction = 1

_RTOL = 1e-12
_ATOL = 1e-22


def _crosses_zero(f0: float, xi_end: float) -> bool:
    sol = solve_ivp(_profile_rhs, (0.0, xi_end), [f0, 0.0], method="DOP853",
                    rtol=_RTOL, atol=_ATOL, events=[_crossing_event, _blowup_event])
    return sol.t_events[0].size > 0


@dataclass(frozen=True, eq=False)
class SingularProfile:
    """Tabulated profile f on [0, xi_max] with the Gaussian tail C xi e^{-xi^2/2} beyond."""
    xi: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    tail_constant: float
    residual: float = 0.0
    iterations: int = 0

    @property
    def xi_max(self) -> float:
        return float(self.xi[-1])

    @property
    def f0(self) -> float:
        return float(self.f[0])

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.xi, self.f, self.fprime)

    def __call__(self, xi):
        xi = np.abs(np.asarray(xi, dtype=float))
        inside = xi <= self.xi_max
        out = np.empty(xi.shape)
        out[inside] = self._spline(xi[inside])
        tail = xi[~inside]
        out[~inside] = self.tail_constant * tail * np.exp(-0.5 * tail * tail)
        return float(out) if out.ndim == 0 else out

    def tail_ratio(self, xi):
        """f(xi) / (xi e^{-xi^2/2})."""
        xi = np.asarray(xi, dtype=float)
        return self(xi) / (xi * np.exp(-0.5 * xi * xi))

    @cached_property
    def mass(self) -> float:
        """K = int_R f(|xi|) dxi."""
        inner = float(self._spline.integrate(0.0, self.xi_max))
        tail = self.tail_constant * math.exp(-0.5 * self.xi_max ** 2)
        return 2.0 * (inner + tail)

    def to_csv(self, path: Path) -> Path:
        meta = {
            "f0": self.f0,
            "tail_constant": self.tail_constant,
            "xi_max": self.xi_max,
            "mass": self.mass,
            "residual": self.residual,
        }
        return write_csv(path, ["xi", "f", "fprime"], zip(self.xi, self.f, self.fprime), meta)

    @classmethod
    def from_csv(cls, path: Path) -> "SingularProfile":
        meta, _, data = read_csv(path)
        return cls(xi=data[:, 0], f=data[:, 1], fprime=data[:, 2],
                   tail_constant=float(meta["tail_constant"]),
                   residual=float(meta.get("residual", "0")))


def _ode_residual(dense, xi: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """|1/2 f'' + 1/2 xi f' + f - 1/2 f^2| with f'' from a 5-point stencil on f'."""
    def fprime(s):
        s = np.asarray(s)
        return np.sign(s) * dense(np.abs(s))[1]

    f, g = dense(xi)
    second = (-fprime(xi + 2 * h) + 8 * fprime(xi + h) - 8 * fprime(xi - h) + fprime(xi - 2 * h)) / (12 * h)
    return np.abs(0.5 * second + 0.5 * xi * g + f - 0.5 * f * f)


@lru_cache(maxsize=8)
def very_singular_profile(xi_max: float = 6.0, tol: float = 1e-8, *,
                          table_step: float = 5e-3,
                          bracket: Tuple[float, float] = (1e-3, 2.0 - 1e-9),
                          max_iterations: int = 200) -> SingularProfile:
    """
    Solve the profile ODE by shooting on f(0).

    Initial values below the profile value make f cross zero, values above
    it keep f positive with polynomial decay. The crossing/positive split is
    decided on [0, xi_max + 2] and bisected to machine precision.
    """
    if xi_max < 6:
        raise PreconditionError(f"xi_max must be >= 6, got {xi_max}")
    xi_end = xi_max + 2.0
    lo, hi = bracket
    lo_crosses, hi_crosses = _crosses_zero(lo, xi_end), _crosses_zero(hi, xi_end)
    if lo_crosses == hi_crosses:
        raise ShootingBracketError(
            "profile shooting bracket does not separate crossing and positive solutions",
            {"bracket": [lo, hi], "xi_end": xi_end, "crosses": lo_crosses},
        )

    iterations = 0
    while iterations < max_iterations:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        iterations += 1
        if _crosses_zero(mid, xi_end) == lo_crosses:
            lo = mid
        else:
            hi = mid

    f0 = hi if lo_crosses else lo
    sol = solve_ivp(_profile_rhs, (0.0, xi_max), [f0, 0.0], method="DOP853",
                    rtol=_RTOL, atol=_ATOL, dense_output=True)
    if not sol.success:
        raise NumericalAbort("profile integration failed", {"message": sol.message, "f0": f0})

    n = int(round(xi_max / table_step)) + 1
    xi = np.linspace(0.0, xi_max, n)
    f, fprime = sol.sol(xi)
    if np.any(f[:-1] <= 0):
        raise NumericalAbort("profile table is not positive", {"f0": f0})

    check = xi[xi <= xi_max - 2.5e-3]
    residual = float(_ode_residual(sol.sol, check).max())
    tail_constant = float(f[-1] / (xi_max * math.exp(-0.5 * xi_max ** 2)))

    logger.info(f"Singular profile: f(0)={f0!r} C={tail_constant:.6g} "
                f"residual={residual:.3g} after {iterations} bisections")
    if residual > tol:
        raise NumericalAbort("profile ODE residual exceeds tolerance",
                             {"residual": residual, "tol": tol, "f0": f0, "iterations": iterations})

    fprime[0] = 0.0
    return SingularProfile(xi=xi, f=f, fprime=fprime, tail_constant=tail_constant,
                           residual=residual, iterations=iterations)


def very_singular_solution(t: float, r, profile: Optional[SingularProfile] = None):
    """W_t(r) = t^{-1} f(|r| / sqrt(t))."""
    if not t > 0:
        raise PreconditionError(f"very singular solution needs t > 0, got {t}")
    profile = profile or very_singular_profile()
    values = np.asarray(profile(np.asarray(r, dtype=float) / math.sqrt(t))) / t
    return float(values) if values.ndim == 0 else values


def profile_mass(profile: Optional[SingularProfile] = None) -> float:
    return (profile or very_singular_profile()).mass


def very_singular_mass(t: float, profile: Optional[SingularProfile] = None) -> float:
    """<W_t, 1> = K t^{-1/2}."""
    if not t > 0:
        raise PreconditionError("t must be > 0")
    return profile_mass(profile) / math.sqrt(t)


def very_singular_mass_integral(T: float, profile: Optional[SingularProfile] = None) -> float:
    """int_0^T <W_s, 1> ds = 2 K sqrt(T)."""
    if T < 0:
        raise PreconditionError("T must be >= 0")
    return 2.0 * profile_mass(profile) * math.sqrt(T)


# ---------------------------------------------------------------------------
# Solver

@dataclass(frozen=True)
class LogLaplaceSolver:
    """
    Time stepper for the log-Laplace equation on a fixed grid.

    Attributes:
        grid: spatial grid.
        dt: nominal time step.
        theta: 0.5 for Crank-Nicolson heat steps, 1.0 for backward Euler.
        startup_steps: heat steps done as two backward Euler half steps.
        grading: the first nominal step is split into grading + 1 geometric steps.
        eps_w: warm-start time of infinite atoms.
    """
    grid: Grid1D
    dt: float
    theta: float = 0.5
    startup_steps: int = 2
    grading: int = 8
    eps_w: float = 1e-3
    profile: Optional[SingularProfile] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.dt >= MIN_DT:
            raise ConfigError("dt", f"time step must be >= {MIN_DT}, got {self.dt}")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("theta", f"theta must lie in [0.5, 1], got {self.theta}")
        if self.startup_steps < 0 or self.grading < 0:
            raise ConfigError("startup_steps", "startup_steps and grading must be >= 0")
        if not self.eps_w > 0:
            raise ConfigError("eps_w", "warm-start time must be > 0")

    @cached_property
    def singular_profile(self) -> SingularProfile:
        return self.profile or very_singular_profile()

    def nominal_step(self, k: int) -> float:
        """Length of step k of a flow started at a rough state."""
        if k <= self.grading:
            return self.dt * 2.0 ** -(self.grading - max(k, 1) + 1)
        return self.dt

    def step_sizes(self, t: float) -> List[float]:
        """Steps of a flow over [0, t], landing exactly on t."""
        sizes: List[float] = []
        elapsed, k = 0.0, 0
        while t - elapsed > 1e-12 * max(t, 1.0):
            tau = min(self.nominal_step(k), t - elapsed)
            sizes.append(tau)
            elapsed += tau
            k += 1
        return sizes

    def heat(self, values: np.ndarray, tau: float, k: int,
             ledger: Optional[StepLedger] = None) -> np.ndarray:
        dx = self.grid.dx
        if k < self.startup_steps:
            half = _heat_values(values, dx, 0.5 * tau, 1.0, ledger)
            return _heat_values(half, dx, 0.5 * tau, 1.0, ledger)
        return _heat_values(values, dx, tau, self.theta, ledger)

    def step(self, values: np.ndarray, tau: float, k: int,
             ledger: Optional[StepLedger] = None) -> np.ndarray:
        """Strang step: reaction tau/2, heat tau, reaction tau/2."""
        v = _react(values, 0.5 * tau)
        v = self.heat(v, tau, k, ledger)
        return _react(v, 0.5 * tau)

    def singular_values(self, location: float, t: Optional[float] = None) -> np.ndarray:
        """W_t(x - location) on the grid, zero on the boundary nodes."""
        t = self.eps_w if t is None else t
        values = np.asarray(very_singular_solution(t, self.grid.nodes - location, self.singular_profile))
        values = values.copy()
        values[0] = values[-1] = 0.0
        return values

    def regularize(self, init: InitialData) -> np.ndarray:
        """Grid values of a field or of (location, mass) atoms; infinite masses warm-start."""
        if isinstance(init, Field):
            if init.grid != self.grid:
                raise PreconditionError("initial field lives on a different grid")
            return np.array(init.values, dtype=float)
        values = np.zeros(self.grid.N)
        for location, weight in init:
            if math.isinf(weight):
                values += self.singular_values(location)
            elif weight < 0:
                raise PreconditionError("atom masses must be >= 0")
            else:
                values[self.grid.nearest_index(location)] += weight / self.grid.dx
        return values

    def flow(self, values: np.ndarray, t: float, ledger: Optional[StepLedger] = None,
             record: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Evolve grid values over [0, t].

        Returns the final values and, when ``record`` is set, the step times and
        masses <V_s, 1> (otherwise two empty arrays).
        """
        dx = self.grid.dx
        times, masses = [0.0], [dx * values.sum()]
        elapsed = 0.0
        for k, tau in enumerate(self.step_sizes(t)):
            values = self.step(values, tau, k, ledger)
            elapsed += tau
            if record:
                times.append(elapsed)
                masses.append(dx * values.sum())
        if not record:
            return values, np.empty(0), np.empty(0)
        return values, np.asarray(times), np.asarray(masses)


def _solver_for(grid: Grid1D, dt: float, **kwargs) -> LogLaplaceSolver:
    return LogLaplaceSolver(grid=grid, dt=dt, **kwargs)


def evolve(init: InitialData, t: float, dt: float, *, grid: Optional[Grid1D] = None,
           ledger: Optional[StepLedger] = None, **solver_options) -> Field:
    """
    V_t(init) for a field or a list of (location, mass) atoms.

    Atoms are regularized as grid deltas; infinite masses start from the
    very singular solution at time eps_w.
    """
    if isinstance(init, Field):
        grid = init.grid
    elif grid is None:
        raise PreconditionError("atom initial data need a grid")
    if not t > 0:
        raise PreconditionError("t must be > 0")
    solver = _solver_for(grid, dt, **solver_options)
    values, _, _ = solver.flow(solver.regularize(init), t, ledger)
    return Field(grid, values)


def heat_evolve(init: InitialData, t: float, dt: float, *, grid: Optional[Grid1D] = None,
                ledger: Optional[StepLedger] = None, **solver_options) -> Field:
    """S_t(init): the pure heat flow with the same time stepping as ``evolve``."""
    if isinstance(init, Field):
        grid = init.grid
    elif grid is None:
        raise PreconditionError("atom initial data need a grid")
    solver = _solver_for(grid, dt, **solver_options)
    values = solver.regularize(init)
    for k, tau in enumerate(solver.step_sizes(t)):
        values = solver.heat(values, tau, k, ledger)
    return Field(grid, values)


def mass_trajectory(init: InitialData, t: float, dt: float, *, grid: Optional[Grid1D] = None,
                    **solver_options) -> Tuple[np.ndarray, np.ndarray]:
    """Step times and <V_s, 1> along the flow of init."""
    if isinstance(init, Field):
        grid = init.grid
    elif grid is None:
        raise PreconditionError("atom initial data need a grid")
    solver = _solver_for(grid, dt, **solver_options)
    _, times, masses = solver.flow(solver.regularize(init), t, record=True)
    return times, masses


def trapezoid(times: np.ndarray, values: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    times, values = np.asarray(times), np.asarray(values)
    return float(0.5 * np.sum(np.diff(times) * (values[1:] + values[:-1])))


def mass_integral(init: InitialData, t: float, dt: float, *, grid: Optional[Grid1D] = None,
                  **solver_options) -> float:
    """int_0^t <V_s(init), 1> ds by the trapezoid rule on the step grid."""
    times, masses = mass_trajectory(init, t, dt, grid=grid, **solver_options)
    return trapezoid(times, masses)
