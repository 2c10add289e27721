"""Outer solver: damped Picard iteration on (u, m, mu) with continuation.

One sweep applies the map of the parametrized system:

1. normalize the previous m (restrict_normalize),
2. solve mu at each level from (D_xu, normalized m),
3. run Fokker-Planck forward with drift D_pH,
4. for problem p1, solve mu again from the fresh m,
5. run HJB backward from the scaled terminal coupling,

then blends (u, m) with the previous iterate.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np

from mfgc_lab.errors import LabError, NonConvergenceError
from mfgc_lab.fp import fp_solve
from mfgc_lab.grid import FieldPath, TimeMesh, integrate, trapezoid_weights
from mfgc_lab.hamiltonian import ModelSpec, build_spec, coupling_g, scaled_family
from mfgc_lab.hjb import hjb_solve, value_gradient
from mfgc_lab.measures import ControlMeasure, DiscreteMeasure, pushforward, restrict_normalize
from mfgc_lab.models.report import MuSolveReport, SolveReport, StageReport
from mfgc_lab.models.solver import ExperimentConfig, Problem, SolverConfig
from mfgc_lab.mu_fixed_point import observed_ratio, solve_mu_path

logger = logging.getLogger(__name__)

UNIQUENESS_FACTOR = 10.0
GUESS_AMPLITUDE = 0.03
GUESS_MODES = 3


@dataclass(frozen=True, eq=False)
class Solution:
    u: FieldPath
    m: FieldPath
    mu: List[ControlMeasure]
    report: Optional[SolveReport] = None
    problem: Problem = Problem.P1
    scale: float = 1.0
    mu_reports: List[MuSolveReport] = field(default_factory=list)

    def distance(self, other: "Solution") -> float:
        return max(self.u.sup_distance(other.u), self.m.sup_distance(other.m))


def _measures(path: FieldPath) -> List[DiscreteMeasure]:
    return [DiscreteMeasure.from_density(path[k], path.grid) for k in range(len(path))]


def _gradients(path: FieldPath) -> np.ndarray:
    return np.array([value_gradient(path[k], path.grid) for k in range(len(path))])


def initial_state(
    spec: ModelSpec,
    problem: Problem = Problem.P1,
    u0: Optional[np.ndarray] = None,
    m0: Optional[np.ndarray] = None,
) -> Solution:
    grid, mesh = spec.grid, spec.mesh
    u = FieldPath.constant(u0, grid, mesh) if u0 is not None else FieldPath.zeros(grid, mesh)
    m = FieldPath.constant(m0 if m0 is not None else spec.initial_density, grid, mesh)
    mu = [pushforward(measure, 0.0) for measure in _measures(m)]
    return Solution(u=u, m=m, mu=mu, problem=problem, scale=0.0)


def apply_map(
    spec: ModelSpec, config: SolverConfig, scale: float, state: Solution
) -> Tuple[FieldPath, FieldPath, List[ControlMeasure], List[MuSolveReport]]:
    """The undamped map: returns fresh (u, m), the HJB measures and their reports."""
    family = scaled_family(spec, config.problem, scale)
    grid, mesh = spec.grid, spec.mesh
    times = mesh.times

    weights = trapezoid_weights(grid)
    normalized = [restrict_normalize(grid.nodes, state.m[k] * weights) for k in range(len(state.m))]
    p_path = _gradients(state.u)
    mu_tilde, reports = solve_mu_path(
        spec, family, p_path, normalized, config.tol_mu, config.max_iter_mu
    )

    drift = np.array(
        [
            np.asarray(family.dp_hamiltonian(times[k], grid.nodes, p_path[k], mu_tilde[k]))
            for k in range(mesh.n_steps + 1)
        ]
    )
    start = spec.initial_density
    if config.problem == Problem.P1:
        start = scale * start
    m_fresh = fp_solve(spec, start, drift, mesh)

    mu_hjb = mu_tilde
    if config.problem == Problem.P1:
        mu_hjb, reports = solve_mu_path(
            spec, family, p_path, _measures(m_fresh), config.tol_mu, config.max_iter_mu
        )

    terminal = family.terminal_weight * coupling_g(spec, np.maximum(m_fresh[-1], 0.0))
    u_fresh = hjb_solve(spec, terminal, mu_hjb, m_fresh, mesh, family=family)
    return u_fresh, m_fresh, mu_hjb, reports


def picard_sweep(spec: ModelSpec, config: SolverConfig, scale: float, state: Solution) -> Solution:
    u_fresh, m_fresh, mu, reports = apply_map(spec, config, scale, state)
    d = config.damping
    u = FieldPath((1.0 - d) * state.u.values + d * u_fresh.values, spec.grid, spec.mesh)
    m = FieldPath((1.0 - d) * state.m.values + d * m_fresh.values, spec.grid, spec.mesh)
    return Solution(
        u=u, m=m, mu=mu, problem=config.problem, scale=scale, mu_reports=reports
    )


def finalize(spec: ModelSpec, config: SolverConfig, scale: float, u: FieldPath, m: FieldPath) -> Solution:
    """Re-solve mu at every level from the final (u, m)."""
    family = scaled_family(spec, config.problem, scale)
    mu, reports = solve_mu_path(
        spec, family, _gradients(u), _measures(m), config.tol_mu, config.max_iter_mu
    )
    return Solution(u=u, m=m, mu=mu, problem=config.problem, scale=scale, mu_reports=reports)


def _stage_report(scale: float, residuals: List[float], tol: float, reports, converged=True) -> StageReport:
    return StageReport(
        scale=scale,
        iterations=sum(1 for r in residuals if r > tol),
        sweeps=len(residuals),
        residuals=residuals,
        contraction_ratio=observed_ratio(residuals, floor=1e-14),
        max_mu_iterations=max((r.iterations for r in reports), default=0),
        max_mu_ratio=max((r.observed_ratio for r in reports), default=0.0),
        converged=converged,
    )


def solve(
    spec: ModelSpec,
    config: SolverConfig,
    initial: Optional[Solution] = None,
    experiment: Optional[ExperimentConfig] = None,
    target: float = 1.0,
) -> Solution:
    """Continuation over config.continuation_steps, warm-started stage to stage.

    With target < 1 every step is multiplied by target, so the last stage
    solves the system at scale = target.
    """
    state = initial or initial_state(spec, config.problem)
    stages: List[StageReport] = []
    for scale in [target * s for s in config.continuation_steps]:
        logger.info(f"Stage {config.problem.value} scale={scale}: starting")
        residuals: List[float] = []
        reports: List[MuSolveReport] = []
        while True:
            if len(residuals) >= config.max_outer:
                stages.append(_stage_report(scale, residuals, config.tol_outer, reports, False))
                report = SolveReport(
                    problem=config.problem,
                    converged=False,
                    final_scale=scale,
                    stages=stages,
                    message=f"no convergence at scale {scale} after {config.max_outer} sweeps",
                    config=experiment,
                )
                logger.error(report.message)
                raise NonConvergenceError(
                    report.message,
                    residuals=residuals,
                    stage=scale,
                    partial=replace(state, report=report),
                )
            try:
                fresh = picard_sweep(spec, config, scale, state)
            except LabError as e:
                e.detail = f"sweep {len(residuals) + 1} at scale {scale}: {e.detail}"
                e.args = (e.detail,)
                raise
            residual = fresh.distance(state)
            residuals.append(residual)
            reports = fresh.mu_reports
            state = fresh
            logger.debug(f"scale={scale} sweep={len(residuals)} residual={residual:.3e}")
            if residual <= config.tol_outer:
                break
        stage = _stage_report(scale, residuals, config.tol_outer, reports)
        stages.append(stage)
        logger.info(
            f"Stage scale={scale}: {stage.sweeps} sweeps, outer ratio {stage.contraction_ratio:.3f}"
        )

    final_scale = target * config.continuation_steps[-1]
    solution = finalize(spec, config, final_scale, state.u, state.m)
    report = SolveReport(
        problem=config.problem,
        converged=True,
        final_scale=final_scale,
        stages=stages,
        max_mu_residual=max((r.residual for r in solution.mu_reports), default=0.0),
        config=experiment,
    )
    return replace(solution, report=report)


def random_initial_guess(spec: ModelSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Small smooth u0 with a random offset, and a positive m0 of unit mass."""
    grid = spec.grid
    s = (grid.nodes - grid.x_lo) / grid.width
    shape = np.sin if not grid.is_neumann else np.cos
    terminal_size = float(np.max(np.abs(spec.terminal_base)))
    u0 = rng.uniform(-terminal_size, terminal_size) * np.ones(grid.n_nodes)
    m0 = np.ones(grid.n_nodes)
    for k in range(1, GUESS_MODES + 1):
        u0 += rng.uniform(-GUESS_AMPLITUDE, GUESS_AMPLITUDE) / k * shape(k * np.pi * s)
        m0 += rng.uniform(-0.3, 0.3) / k * np.cos(k * np.pi * s)
    m0 = np.maximum(m0, 0.0)
    m0 /= integrate(m0, grid) or 1.0
    return u0, m0


def uniqueness_probe(spec: ModelSpec, config: SolverConfig, n_starts: int, seed: int = 0) -> float:
    """Max pairwise sup distance between solves from randomized initial guesses."""
    if n_starts < 2:
        raise ValueError("n_starts must be at least 2")
    rng = np.random.default_rng(seed)
    solutions = [solve(spec, config)]
    for _ in range(n_starts - 1):
        u0, m0 = random_initial_guess(spec, rng)
        initial = initial_state(spec, config.problem, u0=u0, m0=m0)
        solutions.append(solve(spec, config, initial=initial))
    distance = max(a.distance(b) for a, b in combinations(solutions, 2))
    logger.info(f"Uniqueness probe over {n_starts} starts: distance {distance:.3e}")
    return distance


def _experiment_with_horizon(experiment: ExperimentConfig, horizon: float) -> ExperimentConfig:
    mesh = experiment.model.mesh
    n_steps = max(1, int(round(horizon / mesh.dt)))
    model = experiment.model.model_copy(update={"mesh": TimeMesh(T=horizon, n_steps=n_steps)})
    return experiment.model_copy(update={"model": model})


def find_uniqueness_horizon(
    experiment: ExperimentConfig,
    t_lo: float,
    t_hi: float,
    n_bisect: int = 4,
    n_starts: int = 2,
    seed: int = 0,
) -> Tuple[float, List[Tuple[float, float]]]:
    """Bisection for the largest probed T whose probe distance stays within 10*tol_outer.

    Returns T0 (0 when even t_lo fails) and every probed (T, distance);
    failed solves count as distance inf.
    """
    threshold = UNIQUENESS_FACTOR * experiment.solver.tol_outer
    probes: List[Tuple[float, float]] = []

    def probe(horizon: float) -> bool:
        config = _experiment_with_horizon(experiment, horizon)
        try:
            spec = build_spec(config.model)
            distance = uniqueness_probe(spec, config.solver, n_starts, seed)
        except LabError as e:
            logger.info(f"Probe at T={horizon:.4g} failed: {e.detail}")
            distance = math.inf
        probes.append((horizon, distance))
        return distance <= threshold

    if probe(t_hi):
        return t_hi, probes
    if not probe(t_lo):
        return 0.0, probes
    good, bad = t_lo, t_hi
    for _ in range(n_bisect):
        middle = 0.5 * (good + bad)
        if probe(middle):
            good = middle
        else:
            bad = middle
    logger.info(f"Short-horizon uniqueness witness T0={good:.4g}")
    return good, probes
