import logging
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from mfgc_lab.errors import ConfigurationError, ShapeError
from mfgc_lab.grid import FieldPath, Grid1D, TimeMesh, check_shape, gradient
from mfgc_lab.hamiltonian import ModelSpec, ScaledFamily, coupling_f, lambda_scale
from mfgc_lab.measures import ControlMeasure, DiscreteMeasure

logger = logging.getLogger(__name__)

STABILITY_SLACK = 1e-12


def value_gradient(u: np.ndarray, grid: Grid1D) -> np.ndarray:
    """D_xu; under Neumann the boundary entries take the mirrored-ghost value 0."""
    grad = gradient(u, grid)
    if grid.is_neumann:
        grad[0] = grad[-1] = 0.0
    return grad


def diffusion_bands(grid: Grid1D, nu: float, dt: float) -> np.ndarray:
    """Banded (1, 1) form of I - dt*nu*Laplacian with the boundary rows."""
    a = dt * nu / grid.h**2
    n = grid.n_nodes
    bands = np.zeros((3, n))
    bands[0, 1:] = -a
    bands[1, :] = 1.0 + 2.0 * a
    bands[2, :-1] = -a
    if grid.is_neumann:
        # mirrored ghost nodes u_{-1} = u_1 and u_{N+1} = u_{N-1}
        bands[0, 1] = -2.0 * a
        bands[2, n - 2] = -2.0 * a
    else:
        bands[1, 0] = bands[1, -1] = 1.0
        bands[0, 1] = 0.0
        bands[2, n - 2] = 0.0
    return bands


def check_stability(grid: Grid1D, dt: float, drift: np.ndarray) -> None:
    courant = dt * float(np.max(np.abs(drift))) / grid.h
    if courant > 1.0 + STABILITY_SLACK:
        raise ConfigurationError(
            f"explicit Hamiltonian step violates dt*|D_pH|/h <= 1 (got {courant:.4f})"
        )


def hjb_step(
    spec: ModelSpec,
    u_next: np.ndarray,
    mu: ControlMeasure,
    m: DiscreteMeasure,
    t: float,
    dt: float,
    scale: float = 1.0,
    family: Optional[ScaledFamily] = None,
    bands: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One backward step of -u_t - nu u_xx + H(t, x, u_x, mu) = f(t, x, m)."""
    grid = spec.grid
    family = family or lambda_scale(spec, scale)
    u_next = check_shape(u_next, grid)
    x = grid.nodes
    p = value_gradient(u_next, grid)
    check_stability(grid, dt, np.asarray(family.dp_hamiltonian(t, x, p, mu)))

    rhs = u_next - dt * np.asarray(family.hamiltonian(t, x, p, mu), dtype=float)
    if spec.c_f != 0.0 and family.f_weight != 0.0:
        rhs = rhs + dt * family.f_weight * coupling_f(spec, t, m.to_density(grid))
    if not grid.is_neumann:
        rhs[0] = rhs[-1] = 0.0
    if bands is None:
        bands = diffusion_bands(grid, spec.nu, dt)
    u = solve_banded((1, 1), bands, rhs)
    assert np.all(np.isfinite(u)), "tridiagonal solve produced non-finite values"
    return u


def hjb_solve(
    spec: ModelSpec,
    terminal: np.ndarray,
    mu_path: Sequence[ControlMeasure],
    m_path: FieldPath,
    mesh: Optional[TimeMesh] = None,
    scale: float = 1.0,
    family: Optional[ScaledFamily] = None,
) -> FieldPath:
    mesh = mesh or spec.mesh
    grid = spec.grid
    if len(mu_path) != mesh.n_steps + 1 or len(m_path) != mesh.n_steps + 1:
        raise ShapeError(
            f"paths need {mesh.n_steps + 1} levels, got {len(mu_path)} and {len(m_path)}"
        )
    family = family or lambda_scale(spec, scale)
    times = mesh.times
    bands = diffusion_bands(grid, spec.nu, mesh.dt)

    values = np.empty((mesh.n_steps + 1, grid.n_nodes))
    values[-1] = check_shape(terminal, grid)
    for k in range(mesh.n_steps - 1, -1, -1):
        m_next = DiscreteMeasure.from_density(m_path[k + 1], grid)
        values[k] = hjb_step(
            spec,
            values[k + 1],
            mu_path[k + 1],
            m_next,
            times[k + 1],
            mesh.dt,
            family=family,
            bands=bands,
        )
    return FieldPath(values, grid, mesh)
