"""
Uniform one-dimensional grids on [-L, L] and nonnegative fields on them.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Tuple

import numpy as np

from sbm_lab.core.errors import PreconditionError

DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class Grid1D:
    """Nodes x_i = -L + i dx, i = 0..N-1, with Dirichlet-zero boundary nodes."""
    L: float
    N: int
    boundary: str = DIRICHLET

    def __post_init__(self):
        if self.N < 3:
            raise PreconditionError(f"grid needs N >= 3, got {self.N}")
        if not self.L > 0:
            raise PreconditionError(f"grid needs L > 0, got {self.L}")
        if self.boundary != DIRICHLET:
            raise PreconditionError(f"unsupported boundary policy {self.boundary!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = -self.L + self.dx * np.arange(self.N)
        nodes.setflags(write=False)
        return nodes

    def nearest_index(self, x: float) -> int:
        i = int(round((x + self.L) / self.dx))
        return min(max(i, 0), self.N - 1)

    def nearest_indices(self, xs) -> np.ndarray:
        idx = np.rint((np.asarray(xs, dtype=float) + self.L) / self.dx).astype(int)
        return np.clip(idx, 0, self.N - 1)

    def refined(self) -> "Grid1D":
        """Same extent with dx halved."""
        return Grid1D(self.L, 2 * self.N - 1, self.boundary)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.N))


@dataclass(frozen=True, eq=False)
class Field:
    """Nonnegative values aligned to the nodes of a grid."""
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.N,):
            raise PreconditionError(f"field has shape {values.shape}, grid has {self.grid.N} nodes")
        if np.any(values < 0):
            raise PreconditionError("field values must be >= 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid1D, fn: Callable[[np.ndarray], np.ndarray],
                      enforce_boundary: bool = True) -> "Field":
        values = np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.N)
        if enforce_boundary:
            values[0] = values[-1] = 0.0
        return cls(grid, values)

    @classmethod
    def delta(cls, grid: Grid1D, x: float, mass: float = 1.0) -> "Field":
        """Grid delta: mass / dx at the node nearest to x."""
        if mass < 0:
            raise PreconditionError("delta mass must be >= 0")
        values = np.zeros(grid.N)
        values[grid.nearest_index(x)] = mass / grid.dx
        return cls(grid, values)

    @classmethod
    def indicator(cls, grid: Grid1D, a: float, b: float, height: float = 1.0) -> "Field":
        return cls.from_function(grid, lambda x: height * ((x >= a) & (x <= b)))

    def mass(self) -> float:
        return mass(self)

    def __add__(self, other: "Field") -> "Field":
        if other.grid != self.grid:
            raise PreconditionError("cannot add fields on different grids")
        return Field(self.grid, self.values + other.values)

    def scaled(self, factor: float) -> "Field":
        return Field(self.grid, factor * self.values)

    def pair(self, other: "Field") -> float:
        """<self, other> = dx sum_i self_i other_i."""
        return float(self.grid.dx * np.dot(self.values, other.values))


def mass(v: Field) -> float:
    """<v, 1> = dx sum_i v_i."""
    return float(v.grid.dx * v.values.sum())


def atoms_field(grid: Grid1D, atoms: Iterable[Tuple[float, float]]) -> Field:
    """Sum of grid deltas for finite (location, mass) atoms."""
    values = np.zeros(grid.N)
    for location, weight in atoms:
        values[grid.nearest_index(location)] += weight / grid.dx
    return Field(grid, values)
