"""Monte-Carlo oracle for the controlled diffusion behind the Fokker-Planck equation.

dX = -D_pH(t, X, D_xu(t, X), mu(t)) dt + sqrt(2 nu) dB, absorbed at the
boundary (Dirichlet) or reflected by folding (Neumann). The solver's mu(t)
is consumed as data; particles do not interact.

Particles are split into fixed-size blocks and block b draws from
SeedSequence([seed, b]), so trajectories do not depend on the worker count.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import nnls

from mfgc_lab.coupler import Solution
from mfgc_lab.errors import ConfigurationError, ShapeError
from mfgc_lab.fp import fp_solve
from mfgc_lab.grid import FieldPath, Grid1D, integrate
from mfgc_lab.hamiltonian import ModelSpec, ScaledFamily, scaled_family
from mfgc_lab.hjb import value_gradient
from mfgc_lab.measures import ControlMeasure, DiscreteMeasure, dstar, pushforward, w1
from mfgc_lab.models.report import ParticleReport, ToleranceCalibration, ToleranceSample
from mfgc_lab.models.solver import ParticleSettings, Problem

logger = logging.getLogger(__name__)

ABSORBED = np.nan
# substeps must satisfy FOLD_SAFETY * sqrt(2 nu dt_sub) < width
FOLD_SAFETY = 4.0


@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle positions at one time level; absorbed particles hold NaN."""

    t: float
    level: int
    positions: np.ndarray
    controls: np.ndarray
    n_total: int
    rng_seed: int

    @property
    def alive(self) -> np.ndarray:
        return ~np.isnan(self.positions)

    @property
    def live_fraction(self) -> float:
        return float(np.count_nonzero(self.alive)) / self.n_total


@dataclass(frozen=True)
class _BlockTask:
    family: ScaledFamily
    mu: List[ControlMeasure]
    gradients: np.ndarray
    times: np.ndarray
    density: np.ndarray
    initial: Optional[np.ndarray]
    n: int
    n_substeps: int
    seed: int
    block: int
    record: Tuple[int, ...]


def sample_density(density: np.ndarray, grid: Grid1D, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of the piecewise-linear density at uniforms u in [0, 1)."""
    density = np.maximum(np.asarray(density, dtype=float), 0.0)
    h = grid.h
    cell_mass = 0.5 * h * (density[:-1] + density[1:])
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    if cdf[-1] <= 0:
        raise ConfigurationError("cannot sample particles from a density with zero mass")
    target = u * cdf[-1]
    cell = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, grid.n_cells - 1)
    r = target - cdf[cell]
    left = density[cell]
    slope = (density[cell + 1] - left) / h
    root = np.sqrt(np.maximum(left**2 + 2.0 * slope * r, 0.0))
    denominator = left + root
    offset = np.divide(2.0 * r, denominator, out=np.zeros_like(r), where=denominator > 0)
    return grid.nodes[cell] + np.clip(offset, 0.0, h)


def _controls(task: _BlockTask, k: int, x: np.ndarray) -> np.ndarray:
    grid = task.family.spec.grid
    p = np.interp(x, grid.nodes, task.gradients[k])
    return -np.asarray(task.family.dp_hamiltonian(task.times[k], x, p, task.mu[k]), dtype=float)


def _record(task: _BlockTask, k: int, x: np.ndarray) -> np.ndarray:
    controls = np.full(x.shape, np.nan)
    live = ~np.isnan(x)
    if np.any(live):
        controls[live] = _controls(task, k, x[live])
    return controls


def _run_block(task: _BlockTask) -> Tuple[np.ndarray, np.ndarray]:
    spec = task.family.spec
    grid = spec.grid
    rng = np.random.default_rng(np.random.SeedSequence([task.seed, task.block]))
    if task.initial is not None:
        x = np.array(task.initial, dtype=float)
    else:
        x = sample_density(task.density, grid, rng.random(task.n))
    n_steps = len(task.times) - 1
    dt_sub = (task.times[1] - task.times[0]) / task.n_substeps
    sigma = math.sqrt(2.0 * spec.nu * dt_sub)

    positions = np.empty((len(task.record), task.n))
    controls = np.empty((len(task.record), task.n))
    slot = {level: i for i, level in enumerate(task.record)}
    if 0 in slot:
        positions[slot[0]] = x
        controls[slot[0]] = _record(task, 0, x)

    for k in range(n_steps):
        for _ in range(task.n_substeps):
            noise = rng.standard_normal(task.n)
            live = ~np.isnan(x)
            velocity = np.zeros(task.n)
            if np.any(live):
                velocity[live] = _controls(task, k, x[live])
            x = x + velocity * dt_sub + sigma * noise
            if grid.is_neumann:
                x = np.where(x < grid.x_lo, 2.0 * grid.x_lo - x, x)
                x = np.where(x > grid.x_hi, 2.0 * grid.x_hi - x, x)
                x = np.clip(x, grid.x_lo, grid.x_hi)
            else:
                x = np.where((x <= grid.x_lo) | (x >= grid.x_hi), ABSORBED, x)
        if k + 1 in slot:
            positions[slot[k + 1]] = x
            controls[slot[k + 1]] = _record(task, k + 1, x)
    return positions, controls


def snapshot_levels(n_steps: int, count: int) -> List[int]:
    """About count evenly spaced levels, always including 0 and n_steps."""
    count = max(1, min(count, n_steps))
    return sorted({int(round(i * n_steps / count)) for i in range(count + 1)})


def simulate(
    spec: ModelSpec,
    solution: Solution,
    n_particles: int,
    n_substeps: int,
    seed: int,
    initial_positions: Optional[np.ndarray] = None,
    record_levels: Optional[Sequence[int]] = None,
    block_size: int = 4096,
    workers: int = 1,
) -> List[ParticleEnsemble]:
    """Euler-Maruyama particles driven by the solution; one ensemble per recorded level."""
    if n_particles < 1 or n_substeps < 1 or block_size < 1:
        raise ConfigurationError("n_particles, n_substeps and block_size must be positive")
    grid, mesh = spec.grid, spec.mesh
    if FOLD_SAFETY * math.sqrt(2.0 * spec.nu * mesh.dt / n_substeps) >= grid.width:
        raise ConfigurationError(
            f"{n_substeps} substeps are too few: the noise per substep is not small "
            "against the domain width"
        )
    if initial_positions is not None:
        initial_positions = np.asarray(initial_positions, dtype=float)
        if initial_positions.shape != (n_particles,):
            raise ShapeError(f"initial_positions must have shape ({n_particles},)")
        if np.any((initial_positions < grid.x_lo) | (initial_positions > grid.x_hi)):
            raise ConfigurationError("initial positions must lie in the domain")
    record = tuple(sorted(set(record_levels))) if record_levels is not None else tuple(
        range(mesh.n_steps + 1)
    )
    if record and (record[0] < 0 or record[-1] > mesh.n_steps):
        raise ShapeError(f"record levels must lie in [0, {mesh.n_steps}]")

    family = scaled_family(spec, solution.problem, solution.scale)
    gradients = np.array([value_gradient(solution.u[k], grid) for k in range(len(solution.u))])
    tasks = []
    for block, start in enumerate(range(0, n_particles, block_size)):
        stop = min(start + block_size, n_particles)
        tasks.append(
            _BlockTask(
                family=family,
                mu=solution.mu,
                gradients=gradients,
                times=mesh.times,
                density=solution.m[0],
                initial=None if initial_positions is None else initial_positions[start:stop],
                n=stop - start,
                n_substeps=n_substeps,
                seed=seed,
                block=block,
                record=record,
            )
        )
    logger.info(
        f"Simulating {n_particles} particles in {len(tasks)} blocks on {workers} worker(s)"
    )
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, tasks))
    else:
        results = [_run_block(task) for task in tasks]

    positions = np.concatenate([r[0] for r in results], axis=1)
    controls = np.concatenate([r[1] for r in results], axis=1)
    return [
        ParticleEnsemble(
            t=float(mesh.times[level]),
            level=level,
            positions=positions[i],
            controls=controls[i],
            n_total=n_particles,
            rng_seed=seed,
        )
        for i, level in enumerate(record)
    ]


def empirical_measures(
    ensembles: Sequence[ParticleEnsemble], solution: Solution, grid: Grid1D
) -> Tuple[List[DiscreteMeasure], List[ControlMeasure]]:
    """Bin live particles to the nearest node, mass 1/n_total each."""
    if grid != solution.u.grid:
        raise ShapeError("the grid does not match the solution")
    states, controls = [], []
    for ensemble in ensembles:
        if ensemble.level >= len(solution.u):
            raise ShapeError(f"ensemble level {ensemble.level} is outside the solution mesh")
        live = ensemble.alive
        index = np.clip(np.rint((ensemble.positions[live] - grid.x_lo) / grid.h), 0, grid.n_cells)
        index = index.astype(int)
        unit = 1.0 / ensemble.n_total
        occupied, counts = np.unique(index, return_counts=True)
        states.append(DiscreteMeasure(grid.nodes[occupied], counts * unit))
        controls.append(
            ControlMeasure(grid.nodes[index], ensemble.controls[live], np.full(index.size, unit))
        )
    return states, controls


def tolerance_curve(n: int, h: float, dt: float, settings: Optional[ParticleSettings] = None) -> float:
    settings = settings or ParticleSettings()
    return settings.c_stat / math.sqrt(n) + settings.c_h * h + settings.c_t * math.sqrt(dt)


def density_cdf(density: np.ndarray, grid: Grid1D):
    """CDF of the normalized piecewise-linear density, exact within each cell."""
    density = np.maximum(np.asarray(density, dtype=float), 0.0)
    h = grid.h
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * h * (density[:-1] + density[1:]))])
    total = cdf[-1]

    def evaluate(x):
        x = np.clip(np.asarray(x, dtype=float), grid.x_lo, grid.x_hi)
        cell = np.clip(((x - grid.x_lo) // h).astype(int), 0, grid.n_cells - 1)
        s = x - grid.nodes[cell]
        slope = (density[cell + 1] - density[cell]) / h
        return (cdf[cell] + density[cell] * s + 0.5 * slope * s**2) / total

    return evaluate


def compare_with_pde(
    spec: ModelSpec,
    solution: Solution,
    ensembles: Sequence[ParticleEnsemble],
    settings: Optional[ParticleSettings] = None,
) -> ParticleReport:
    """Absorbed fraction (Dirichlet) or d* of m(T) (Neumann) against the tolerance budget."""
    settings = settings or ParticleSettings()
    grid, mesh = spec.grid, spec.mesh
    final = ensembles[-1]
    if final.level != mesh.n_steps:
        raise ShapeError("the last ensemble must be recorded at the final time")
    n = final.n_total
    mass0 = integrate(solution.m[0], grid)
    mass_T = integrate(solution.m[-1], grid)
    if not grid.is_neumann:
        slack = settings.c_absorbed * (grid.h + math.sqrt(mesh.dt))
        pde_absorbed = 1.0 - mass_T / mass0
        mc_absorbed = 1.0 - final.live_fraction
        standard_error = math.sqrt(max(mc_absorbed * (1.0 - mc_absorbed), 0.0) / n)
        value = abs(mc_absorbed - pde_absorbed)
        tolerance = 3.0 * standard_error + slack
        metric = "absorbed_fraction_gap"
        details = {
            "pde_absorbed_fraction": pde_absorbed,
            "particle_absorbed_fraction": mc_absorbed,
            "standard_error": standard_error,
        }
    else:
        states, _ = empirical_measures([final], solution, grid)
        pde = DiscreteMeasure.from_density(solution.m[-1] / mass0, grid)
        value = dstar(states[0], pde)
        tolerance = tolerance_curve(n, grid.h, mesh.dt, settings)
        metric = "dstar"
        ks = stats.kstest(final.positions[final.alive], density_cdf(solution.m[-1], grid))
        details = {
            "w1": w1(states[0], pde),
            "ks_statistic": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
        }

    report = ParticleReport(
        boundary=grid.boundary.value,
        n_particles=n,
        seed=final.rng_seed,
        metric=metric,
        value=float(value),
        tolerance=float(tolerance),
        within_tolerance=bool(value <= tolerance),
        live_fraction=final.live_fraction,
        details=details,
    )
    logger.info(f"Particle oracle {metric}={value:.4g} against tolerance {tolerance:.4g}")
    return report


def zero_drift_solution(spec: ModelSpec) -> Solution:
    """u = 0 and control-free measures, so particles and the PDE see pure diffusion."""
    grid, mesh = spec.grid, spec.mesh
    drift = np.zeros((mesh.n_steps + 1, grid.n_nodes))
    m = fp_solve(spec, spec.initial_density, drift, mesh)
    mu = [pushforward(DiscreteMeasure.from_density(m[k], grid), 0.0) for k in range(len(m))]
    return Solution(u=FieldPath.zeros(grid, mesh), m=m, mu=mu, problem=Problem.P1, scale=0.0)


def calibrate_tolerance(
    spec: ModelSpec,
    sizes: Sequence[int] = (1000, 4000, 16000),
    n_substeps: int = 4,
    seed: int = 0,
    safety: float = 2.0,
    workers: int = 1,
) -> ToleranceCalibration:
    """Fit d*(n) ~ a/sqrt(n) + b on a zero-drift reflected run.

    Size i draws from seed + i. The constants are safety * a for the sampling
    term, and safety * b spread evenly over h and sqrt(dt).
    """
    if not spec.grid.is_neumann:
        raise ConfigurationError("tolerance calibration needs reflecting (Neumann) walls")
    if len(sizes) < 2:
        raise ValueError("calibration needs at least two particle counts")
    grid, mesh = spec.grid, spec.mesh
    solution = zero_drift_solution(spec)
    samples = []
    for i, n in enumerate(sizes):
        ensembles = simulate(
            spec, solution, n, n_substeps, seed + i, record_levels=[mesh.n_steps], workers=workers
        )
        report = compare_with_pde(spec, solution, ensembles)
        samples.append(ToleranceSample(n_particles=n, dstar=report.value))
        logger.info(f"Calibration n={n}: d*={report.value:.4g}")

    design = np.array([[1.0 / math.sqrt(s.n_particles), 1.0] for s in samples])
    (a, b), _ = nnls(design, np.array([s.dstar for s in samples]))
    spread = grid.h + math.sqrt(mesh.dt)
    return ToleranceCalibration(
        c_stat=safety * float(a),
        c_h=safety * float(b) / spread,
        c_t=safety * float(b) / spread,
        safety=safety,
        h=grid.h,
        dt=mesh.dt,
        seed=seed,
        samples=samples,
    )
