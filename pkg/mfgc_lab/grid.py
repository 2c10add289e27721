"""Uniform space/time discretization of [0, T] x [x_lo, x_hi].

Fields are node-centered: a ScalarField is a 1-D array with n_cells + 1
entries, a FieldPath stacks one such array per time level.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mfgc_lab.errors import ShapeError


class BoundaryKind(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class Grid1D(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_lo: float = Field(0.0, description="Left end of the domain.")
    x_hi: float = Field(1.0, description="Right end of the domain.")
    n_cells: int = Field(
        ..., ge=2, description="Number of uniform cells (n_cells + 1 nodes)."
    )
    boundary: BoundaryKind = Field(
        BoundaryKind.NEUMANN, description="Boundary condition on both ends."
    )

    @model_validator(mode="after")
    def _check_interval(self):
        if not self.x_hi > self.x_lo:
            raise ValueError(f"x_hi={self.x_hi} must exceed x_lo={self.x_lo}")
        return self

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_cells

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.x_lo + self.h * np.arange(self.n_nodes)

    @property
    def is_neumann(self) -> bool:
        return self.boundary == BoundaryKind.NEUMANN


class TimeMesh(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    T: float = Field(..., gt=0, description="Time horizon.")
    n_steps: int = Field(..., ge=1, description="Number of uniform time steps.")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class FieldPath:
    """Time-indexed node values, shape (n_steps + 1, n_cells + 1)."""

    values: np.ndarray
    grid: Grid1D
    mesh: TimeMesh

    def __post_init__(self):
        expected = (self.mesh.n_steps + 1, self.grid.n_nodes)
        if np.shape(self.values) != expected:
            raise ShapeError(
                f"FieldPath has shape {np.shape(self.values)}, expected {expected}"
            )

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def constant(cls, field: np.ndarray, grid: Grid1D, mesh: TimeMesh) -> "FieldPath":
        check_shape(field, grid)
        return cls(np.tile(np.asarray(field, dtype=float), (mesh.n_steps + 1, 1)), grid, mesh)

    @classmethod
    def zeros(cls, grid: Grid1D, mesh: TimeMesh) -> "FieldPath":
        return cls(np.zeros((mesh.n_steps + 1, grid.n_nodes)), grid, mesh)

    def sup_distance(self, other: "FieldPath") -> float:
        return float(np.max(np.abs(self.values - other.values)))


def check_shape(field: np.ndarray, grid: Grid1D) -> np.ndarray:
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.n_nodes,):
        raise ShapeError(
            f"field has shape {field.shape}, grid expects ({grid.n_nodes},)"
        )
    return field


def trapezoid_weights(grid: Grid1D) -> np.ndarray:
    weights = np.full(grid.n_nodes, grid.h)
    weights[0] = weights[-1] = 0.5 * grid.h
    return weights


def gradient(field: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Centered differences inside, one-sided second order at both ends."""
    f = check_shape(field, grid)
    h = grid.h
    grad = np.empty_like(f)
    grad[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    grad[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    grad[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return grad


def integrate(field: np.ndarray, grid: Grid1D) -> float:
    f = check_shape(field, grid)
    return float(np.dot(trapezoid_weights(grid), f))
