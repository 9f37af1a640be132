"""
Pydantic models shared by the experiment configurations.
"""
import math
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sbm_lab.core.config import config
from sbm_lab.numerics.drift_model import DriftSpec, TruncationLevel, drift_from_config
from sbm_lab.numerics.grid import Field as GridField
from sbm_lab.numerics.grid import Grid1D
from sbm_lab.numerics.log_laplace import LogLaplaceSolver


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(StrictModel):
    """Uniform grid on [-L, L] with N nodes."""
    L: float = Field(gt=0, description="Half width of the spatial domain")
    N: int = Field(ge=3, description="Number of grid nodes, boundary included")
    boundary: Literal["dirichlet"] = Field(default="dirichlet", description="Boundary policy")

    def build(self) -> Grid1D:
        return Grid1D(self.L, self.N, self.boundary)


class AtomConfig(StrictModel):
    lam: float = Field(gt=0, description="Atom location on (0, inf)")
    weight: float = Field(ge=0, description="Atom mass")


class DensityConfig(StrictModel):
    """Piecewise-constant density on [breakpoints[k], breakpoints[k+1])."""
    breakpoints: List[float]
    values: List[float]

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.values and len(self.breakpoints) != len(self.values) + 1:
            raise ValueError("density needs len(breakpoints) == len(values) + 1")
        return self


class MeasureConfig(StrictModel):
    atoms: List[AtomConfig] = Field(default_factory=list)
    density: Optional[DensityConfig] = None


class DriftConfig(StrictModel):
    """Either a catalog preset or explicit (nu1, nu2, b0, b1)."""
    preset: Optional[Literal["zero", "step", "immigration", "holder", "completely_monotone"]] = None
    b0: float = 0.0
    b1: float = 0.0
    a: float = Field(default=0.0, description="Constant immigration rate for preset 'immigration'")
    alpha: float = Field(default=0.5, gt=0, lt=1)
    lam_max: float = Field(default=1e6, gt=1)
    bins: int = Field(default=2000, ge=1)
    nu1: Optional[MeasureConfig] = None
    nu2: Optional[MeasureConfig] = None
    level: Union[int, str, None] = Field(default=None, description="Truncation level n; null or 'inf' for infinity")

    @field_validator("level")
    @classmethod
    def _check_level(cls, value):
        if isinstance(value, str) and value.lower() not in ("inf", "infinity"):
            raise ValueError("level must be a positive integer, 'inf' or null")
        if isinstance(value, int) and value <= 0:
            raise ValueError("level must be positive")
        return value

    def build(self) -> Tuple[DriftSpec, TruncationLevel]:
        return drift_from_config(self)


class SolverConfig(StrictModel):
    """Log-Laplace time stepping."""
    dt: float = Field(default=1e-3, gt=0)
    theta: float = Field(default=0.5, ge=0.5, le=1.0)
    startup_steps: int = Field(default=2, ge=0)
    grading: int = Field(default=8, ge=0)
    eps_w: float = Field(default=1e-3, gt=0)

    def options(self) -> dict:
        return self.model_dump(exclude={"dt"})

    def build(self, grid: Grid1D) -> LogLaplaceSolver:
        return LogLaplaceSolver(grid=grid, dt=self.dt, **self.options())


class MonteCarloConfig(StrictModel):
    paths: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default_factory=lambda: config.workers, ge=1)
    chunk: int = Field(default=256, ge=1)


class PointMass(StrictModel):
    """One atom (x, mass) of a test measure; mass may be .inf."""
    x: float = 0.0
    mass: float = Field(default=1.0, ge=0)

    def as_tuple(self):
        return (self.x, self.mass)


def atoms_of(points: Sequence[PointMass]) -> List[Tuple[float, float]]:
    return [p.as_tuple() for p in points]


class InitialFieldConfig(StrictModel):
    kind: Literal["indicator", "delta", "gaussian", "zero"] = "indicator"
    a: float = -1.0
    b: float = 1.0
    height: float = Field(default=1.0, ge=0)
    x: float = 0.0
    mass: float = Field(default=1.0, ge=0)
    width: float = Field(default=0.5, gt=0)

    def build(self, grid: Grid1D) -> GridField:
        if self.kind == "zero":
            return grid.zeros()
        if self.kind == "delta":
            return GridField.delta(grid, self.x, self.mass)
        if self.kind == "gaussian":
            scale = self.mass / math.sqrt(2 * math.pi * self.width ** 2)
            return GridField.from_function(
                grid, lambda z: scale * np.exp(-0.5 * ((z - self.x) / self.width) ** 2))
        return GridField.indicator(grid, self.a, self.b, self.height)


class ExperimentInput(StrictModel):
    """Fields shared by every experiment."""
    mc: MonteCarloConfig = Field(default_factory=MonteCarloConfig)
