import logging
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_banded

from mfgc_lab.errors import ConfigurationError, InvalidMeasureError, ShapeError
from mfgc_lab.grid import FieldPath, Grid1D, TimeMesh, check_shape, integrate, trapezoid_weights
from mfgc_lab.hamiltonian import ModelSpec

logger = logging.getLogger(__name__)

NEGATIVE_SLACK = 1e-12
MASS_SLACK = 1e-8


def fp_bands(grid: Grid1D, nu: float, dt: float) -> np.ndarray:
    """Banded (1, 1) form of the implicit diffusion on node control volumes."""
    c = dt * nu / grid.h
    n = grid.n_nodes
    bands = np.zeros((3, n))
    bands[0, 1:] = -c
    bands[2, :-1] = -c
    bands[1, :] = trapezoid_weights(grid) + 2.0 * c
    if grid.is_neumann:
        # no diffusive flux through the walls
        bands[1, 0] -= c
        bands[1, -1] -= c
    else:
        bands[1, 0] = bands[1, -1] = 1.0
        bands[0, 1] = 0.0
        bands[2, n - 2] = 0.0
    return bands


def courant_number(grid: Grid1D, drift: np.ndarray, dt: float) -> float:
    """dt * (upwind outflow rate) / (node volume), maximized over active nodes."""
    velocity = -np.asarray(drift, dtype=float)
    faces = 0.5 * (velocity[:-1] + velocity[1:])
    outflow = np.zeros(grid.n_nodes)
    outflow[:-1] += np.maximum(faces, 0.0)
    outflow[1:] -= np.minimum(faces, 0.0)
    ratio = outflow / trapezoid_weights(grid)
    if not grid.is_neumann:
        ratio = ratio[1:-1]
    return float(dt * np.max(ratio))


def fp_step(
    spec: ModelSpec,
    m_prev: np.ndarray,
    drift: np.ndarray,
    dt: float,
    bands: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One forward step of m_t - nu m_xx - (m D_pH)_x = 0.

    drift holds D_pH at the nodes; players move with velocity -drift.
    """
    grid = spec.grid
    m = check_shape(m_prev, grid).copy()
    drift = check_shape(drift, grid)
    if np.any(m < -NEGATIVE_SLACK):
        raise InvalidMeasureError(f"density has negative entry {float(m.min()):.3e}")
    courant = courant_number(grid, drift, dt)
    if courant > 1.0:
        raise ConfigurationError(f"Fokker-Planck CFL violated: courant number {courant:.4f} > 1")
    if not grid.is_neumann:
        m[0] = m[-1] = 0.0

    velocity = -drift
    faces = 0.5 * (velocity[:-1] + velocity[1:])
    flux = np.maximum(faces, 0.0) * m[:-1] + np.minimum(faces, 0.0) * m[1:]
    net_outflow = np.zeros(grid.n_nodes)
    net_outflow[:-1] += flux
    net_outflow[1:] -= flux

    rhs = trapezoid_weights(grid) * m - dt * net_outflow
    if not grid.is_neumann:
        rhs[0] = rhs[-1] = 0.0
    if bands is None:
        bands = fp_bands(grid, spec.nu, dt)
    return solve_banded((1, 1), bands, rhs)


def fp_solve(
    spec: ModelSpec,
    m0: np.ndarray,
    drift_path: Union[FieldPath, np.ndarray],
    mesh: Optional[TimeMesh] = None,
) -> FieldPath:
    mesh = mesh or spec.mesh
    grid = spec.grid
    m0 = check_shape(m0, grid)
    drift_values = drift_path.values if isinstance(drift_path, FieldPath) else np.asarray(drift_path)
    if drift_values.shape != (mesh.n_steps + 1, grid.n_nodes):
        raise ShapeError(f"drift path has shape {drift_values.shape}")
    if integrate(np.abs(m0), grid) > 1.0 + MASS_SLACK:
        raise InvalidMeasureError("initial density must have mass at most 1")

    bands = fp_bands(grid, spec.nu, mesh.dt)
    values = np.empty((mesh.n_steps + 1, grid.n_nodes))
    values[0] = m0
    for k in range(mesh.n_steps):
        values[k + 1] = fp_step(spec, values[k], drift_values[k], mesh.dt, bands=bands)
    return FieldPath(values, grid, mesh)
