"""Discrete state measures m, control measures mu = (I, alpha)#m, and metrics."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from mfgc_lab.errors import (
    InterpolationError,
    InvalidMeasureError,
    MetricDomainError,
    ShapeError,
)
from mfgc_lab.grid import Grid1D, check_shape, trapezoid_weights

logger = logging.getLogger(__name__)

MASS_SLACK = 1e-10
PROBABILITY_SLACK = 1e-8
NEGATIVE_SLACK = 1e-12
# positions outside the grid by less than this are snapped back in
LOCATION_SLACK = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if positions.ndim != 1 or positions.shape != weights.shape:
            raise ShapeError(
                f"positions {positions.shape} and weights {weights.shape} must match"
            )
        if np.any(weights < -NEGATIVE_SLACK):
            raise InvalidMeasureError(
                f"measure has negative weight {float(weights.min()):.3e}"
            )
        mass = float(np.sum(weights))
        if mass > 1.0 + MASS_SLACK:
            raise InvalidMeasureError(f"measure has mass {mass:.12g} > 1")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_density(cls, density: np.ndarray, grid: Grid1D) -> "DiscreteMeasure":
        density = check_shape(density, grid)
        return cls(grid.nodes, density * trapezoid_weights(grid))

    @classmethod
    def dirac(cls, x: float, weight: float = 1.0) -> "DiscreteMeasure":
        return cls(np.array([x]), np.array([weight]))

    @classmethod
    def zero_on(cls, grid: Grid1D) -> "DiscreteMeasure":
        return cls(grid.nodes, np.zeros(grid.n_nodes))

    def to_density(self, grid: Grid1D) -> np.ndarray:
        if self.positions.shape != (grid.n_nodes,):
            raise ShapeError("measure atoms do not sit on the grid nodes")
        return self.weights / trapezoid_weights(grid)

    def total_mass(self) -> float:
        return total_mass(self)

    def __len__(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class ControlMeasure:
    """Atoms (x_i, alpha_i, w_i) of a measure on state x control."""

    positions: np.ndarray
    controls: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if not (positions.shape == controls.shape == weights.shape) or positions.ndim != 1:
            raise ShapeError("positions, controls and weights must share one shape")
        if np.any(weights < -NEGATIVE_SLACK):
            raise InvalidMeasureError(
                f"control measure has negative weight {float(weights.min()):.3e}"
            )
        if not np.all(np.isfinite(controls)):
            raise InvalidMeasureError("control coordinates must be finite")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "weights", weights)

    def moment(self) -> float:
        """Z(mu), the raw first moment of the control marginal."""
        return float(np.dot(self.weights, self.controls))

    def marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.positions, self.weights)

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self) -> int:
        return self.positions.size


def pushforward(
    m: DiscreteMeasure,
    alpha: Union[np.ndarray, float],
    grid: Optional[Grid1D] = None,
) -> ControlMeasure:
    """(I, alpha)#m.

    With a grid, alpha holds node values and is interpolated linearly at the
    atoms; without one it must already hold one value per atom.
    """
    if np.isscalar(alpha):
        controls = np.full(m.positions.shape, float(alpha))
    elif grid is None:
        controls = np.asarray(alpha, dtype=float)
        if controls.shape != m.positions.shape:
            raise ShapeError(
                f"alpha has {controls.size} values for {m.positions.size} atoms"
            )
    else:
        values = check_shape(alpha, grid)
        outside = (m.positions < grid.x_lo - LOCATION_SLACK) | (
            m.positions > grid.x_hi + LOCATION_SLACK
        )
        if np.any(outside):
            bad = float(m.positions[outside][0])
            raise InterpolationError(
                f"atom at x={bad} lies outside [{grid.x_lo}, {grid.x_hi}]"
            )
        controls = np.interp(m.positions, grid.nodes, values)
    return ControlMeasure(m.positions, controls, m.weights.copy())


def lambda_q(mu: ControlMeasure, q: float) -> float:
    """L^q moment of the control marginal; q = inf gives the sup over the support."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    support = mu.weights > 0
    if not np.any(support):
        return 0.0
    magnitudes = np.abs(mu.controls[support])
    if math.isinf(q):
        return float(np.max(magnitudes))
    return float(np.sum(mu.weights[support] * magnitudes**q) ** (1.0 / q))


def total_mass(m: DiscreteMeasure) -> float:
    return float(np.sum(m.weights))


def restrict_normalize(positions: np.ndarray, weights: np.ndarray) -> DiscreteMeasure:
    """|m|, divided by its L1 norm when that exceeds 1.

    Takes raw atoms: the input may be signed or heavier than a sub-probability.
    """
    weights = np.abs(np.asarray(weights, dtype=float))
    mass = float(np.sum(weights))
    if mass > 1.0:
        weights = weights / mass
    return DiscreteMeasure(positions, weights)


def w1(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    """Exact 1-D Wasserstein-1 distance as the L1 distance between CDFs."""
    for label, m in (("m1", m1), ("m2", m2)):
        mass = total_mass(m)
        if abs(mass - 1.0) > PROBABILITY_SLACK:
            raise MetricDomainError(
                f"W1 needs probability measures, {label} has mass {mass:.12g}"
            )
    positions = np.concatenate([m1.positions, m2.positions])
    signed = np.concatenate([m1.weights, -m2.weights])
    order = np.argsort(positions, kind="stable")
    positions = positions[order]
    cdf_gap = np.cumsum(signed[order])[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(positions)))


def _merge_atoms(m1: DiscreteMeasure, m2: DiscreteMeasure):
    positions = np.concatenate([m1.positions, m2.positions])
    signed = np.concatenate([m1.weights, -m2.weights])
    nodes, inverse = np.unique(positions, return_inverse=True)
    difference = np.zeros(nodes.size)
    np.add.at(difference, inverse, signed)
    return nodes, difference


def dstar(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    """Bounded-Lipschitz distance by an exact chain-constrained LP.

    Maximizes sum(phi_i * (w1_i - w2_i)) subject to |phi_i| <= 1 and
    |phi_{i+1} - phi_i| <= x_{i+1} - x_i over the merged atom locations.
    """
    nodes, difference = _merge_atoms(m1, m2)
    if not np.any(difference):
        return 0.0
    n = nodes.size
    a_ub = None
    b_ub = None
    if n > 1:
        chain = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        a_ub = sparse.vstack([chain, -chain]).tocsr()
        gaps = np.diff(nodes)
        b_ub = np.concatenate([gaps, gaps])
    result = linprog(
        -difference,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(-1.0, 1.0)] * n,
        method="highs",
    )
    if not result.success:
        raise MetricDomainError(f"d* linear program failed: {result.message}")
    return float(max(-result.fun, 0.0))
