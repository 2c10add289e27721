"""A-priori estimates and identities checked against a computed Solution.

Every check returns BoundChecks (lhs, rhs, margin, satisfied) and never
mutates the solution. Constants come from the ModelSpec's
ModelConstants; discretization slack enters as C * (h^2 + dt).
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from mfgc_lab.coupler import Solution, solve
from mfgc_lab.errors import SpecRejectedError, UnsupportedVariantError
from mfgc_lab.grid import FieldPath, Grid1D, trapezoid_weights
from mfgc_lab.hamiltonian import (
    ModelSpec,
    ScaledFamily,
    audit_assumptions,
    constant_gap,
    coupling_f,
    scaled_family,
)
from mfgc_lab.hjb import value_gradient
from mfgc_lab.measures import DiscreteMeasure, lambda_q
from mfgc_lab.models.report import BoundCheck, SolveReport
from mfgc_lab.models.solver import EstimateSettings, ExperimentConfig, Problem, SolverConfig
from mfgc_lab.models.spec import ModelVariant
from mfgc_lab.mu_fixed_point import (
    lambda_bound,
    lambda_inf_bound_monotone,
    lambda_qprime_bound_monotone,
)

logger = logging.getLogger(__name__)

MAX_PRINCIPLE_FLOOR = 1e-6
NEUMANN_MASS_TOL = 1e-10
DIRICHLET_MASS_STEP_TOL = 1e-12


def _family(solution: Solution, spec: ModelSpec, scale: Optional[float] = None) -> ScaledFamily:
    return scaled_family(spec, solution.problem, solution.scale if scale is None else scale)


def _slack(spec: ModelSpec, constant: float) -> float:
    return constant * (spec.grid.h**2 + spec.mesh.dt)


def _masses(path: FieldPath) -> np.ndarray:
    return path.values @ trapezoid_weights(path.grid)


def _gradients(u: FieldPath) -> np.ndarray:
    return np.array([value_gradient(u[k], u.grid) for k in range(len(u))])


def _f_path(spec: ModelSpec, m: FieldPath) -> np.ndarray:
    times = spec.mesh.times
    return np.array([coupling_f(spec, times[k], np.maximum(m[k], 0.0)) for k in range(len(m))])


def check_max_principle(
    solution: Solution,
    spec: ModelSpec,
    scale: Optional[float] = None,
    settings: Optional[EstimateSettings] = None,
) -> BoundCheck:
    settings = settings or EstimateSettings()
    family = _family(solution, spec, scale)
    x = spec.grid.nodes
    times = spec.mesh.times
    f_path = _f_path(spec, solution.m)
    source = np.array(
        [
            np.max(
                np.abs(
                    np.asarray(family.hamiltonian(times[k], x, np.zeros_like(x), solution.mu[k]))
                    - family.f_weight * f_path[k]
                )
            )
            for k in range(len(times))
        ]
    )
    lhs = float(np.max(np.abs(solution.u.values)))
    rhs = float(np.max(np.abs(solution.u[-1]))) + float(trapezoid(source, times))
    return BoundCheck.evaluate(
        "max_principle",
        "maximum principle: |u| <= |u(T)| + integral of sup|H(., 0, mu) - f|",
        lhs,
        rhs,
        MAX_PRINCIPLE_FLOOR + _slack(spec, settings.discretization_constant),
    )


def energy_identity_residual(solution: Solution, spec: ModelSpec) -> float:
    """int u(T)m(T) - int u(0)m(0) + int int (D_pH.D_xu - H + f) dm dt, all scaled."""
    family = _family(solution, spec)
    grid = spec.grid
    weights = trapezoid_weights(grid)
    times = spec.mesh.times
    u, m = solution.u, solution.m
    p = _gradients(u)
    f_path = _f_path(spec, m)
    integrand = np.empty(len(times))
    for k, t in enumerate(times):
        b = np.asarray(family.dp_hamiltonian(t, grid.nodes, p[k], solution.mu[k]))
        h = np.asarray(family.hamiltonian(t, grid.nodes, p[k], solution.mu[k]))
        integrand[k] = float(np.dot(weights, (b * p[k] - h + family.f_weight * f_path[k]) * m[k]))
    boundary = float(np.dot(weights, u[-1] * m[-1]) - np.dot(weights, u[0] * m[0]))
    return boundary + float(trapezoid(integrand, times))


def check_energy_identity(
    solution: Solution, spec: ModelSpec, settings: Optional[EstimateSettings] = None
) -> BoundCheck:
    settings = settings or EstimateSettings()
    return BoundCheck.evaluate(
        "energy_identity",
        "energy identity pairing HJB against FP",
        abs(energy_identity_residual(solution, spec)),
        _slack(spec, settings.identity_constant),
    )


def _scaling_solutions(
    spec: ModelSpec,
    config: SolverConfig,
    scales: Sequence[float],
    solution: Optional[Solution],
) -> List[Solution]:
    solutions = []
    for scale in scales:
        if solution is not None and scale == 1.0 and solution.scale == 1.0:
            solutions.append(solution)
        else:
            logger.info(f"Re-solving at scale {scale} for the scaling check")
            solutions.append(solve(spec, config, target=scale))
    return solutions


def _band_check(
    name: str, anchor: str, scales: Sequence[float], ratios: Sequence[float], band: float
) -> BoundCheck:
    reference = ratios[list(scales).index(1.0)]
    return BoundCheck.evaluate(name, anchor, max(ratios), band * reference, 1e-12)


def check_gradient_scaling(
    spec: ModelSpec,
    config: SolverConfig,
    scales: Sequence[float] = (0.25, 0.5, 1.0),
    band: float = 1.25,
    solution: Optional[Solution] = None,
) -> BoundCheck:
    """Non-explosion of |D_xu(lambda)|/sqrt(lambda) (Neumann) or |D_xu(lambda)| (Dirichlet)."""
    if config.problem != Problem.P1:
        raise UnsupportedVariantError("gradient scaling is a problem p1 check")
    if 1.0 not in scales or any(s <= 0 or s > 1 for s in scales):
        raise ValueError("scales must lie in (0, 1] and contain 1")
    solutions = _scaling_solutions(spec, config, scales, solution)
    ratios = []
    for scale, sol in zip(scales, solutions):
        sup = float(np.max(np.abs(_gradients(sol.u))))
        ratios.append(sup / math.sqrt(scale) if spec.grid.is_neumann else sup)
    if spec.grid.is_neumann:
        anchor = "Neumann gradient bound |D_xu| <= C lambda^(1/2)"
    else:
        anchor = "Dirichlet gradient bound |D_xu| <= C, uniform in lambda"
    return _band_check("gradient_scaling", anchor, scales, ratios, band)


def check_lambda_bounds(
    solution: Solution,
    spec: ModelSpec,
    scale: Optional[float] = None,
    tol_mu: float = 1e-10,
) -> List[BoundCheck]:
    """Lambda_{q'} and Lambda_inf bounds at every level; reports the worst level."""
    scale = solution.scale if scale is None else scale
    grid = spec.grid
    p = _gradients(solution.u)
    qp = spec.q_prime
    lhs_qp, rhs_qp, lhs_inf, rhs_inf = [], [], [], []
    for k, mu in enumerate(solution.mu):
        m = DiscreteMeasure.from_density(solution.m[k], grid)
        lam_qp = lambda_q(mu, qp)
        lam_inf = lambda_q(mu, math.inf)
        if solution.problem == Problem.P2:
            lhs_qp.append(lam_qp**qp)
            rhs_qp.append(lambda_qprime_bound_monotone(spec, scale, p[k], m))
            rhs_inf.append(lambda_inf_bound_monotone(spec, scale, p[k], lam_qp))
        else:
            lhs_qp.append(lam_qp)
            rhs_qp.append(lambda_bound(spec, scale, p[k], m, qp))
            rhs_inf.append(lambda_bound(spec, scale, p[k], m, math.inf))
        lhs_inf.append(lam_inf)

    tolerance = 2.0 * tol_mu
    checks = []
    for name, anchor, lhs, rhs in (
        ("lambda_qprime_bound", "bound on Lambda_{q'} of the control measure", lhs_qp, rhs_qp),
        ("lambda_inf_bound", "bound on Lambda_inf of the control measure", lhs_inf, rhs_inf),
    ):
        gaps = np.array(lhs) - np.array(rhs)
        worst = int(np.argmax(gaps))
        checks.append(BoundCheck.evaluate(name, anchor, lhs[worst], rhs[worst], tolerance))
    return checks


def check_convergence(report: SolveReport, tol_outer: float) -> BoundCheck:
    """The stored iterate met tol_outer; a non-converged partial always fails."""
    residuals = [r for stage in report.stages for r in stage.residuals]
    last = residuals[-1] if residuals else 0.0
    return BoundCheck(
        name="outer_residual",
        anchor="last outer residual <= tol_outer",
        lhs=last,
        rhs=tol_outer,
        margin=tol_outer - last,
        satisfied=report.converged and last <= tol_outer,
    )


def check_mass_behavior(solution: Solution, grid: Grid1D) -> BoundCheck:
    masses = _masses(solution.m)
    if grid.is_neumann:
        # compared against the initial mass, which is lambda under problem p1
        return BoundCheck.evaluate(
            "mass_conservation",
            "reflecting boundary conserves mass",
            float(np.max(np.abs(masses - masses[0]))),
            0.0,
            NEUMANN_MASS_TOL,
        )
    increase = float(np.max(np.diff(masses))) if masses.size > 1 else 0.0
    return BoundCheck.evaluate(
        "mass_escape",
        "absorbing boundary: mass is nonincreasing",
        increase,
        0.0,
        DIRICHLET_MASS_STEP_TOL,
    )


def check_duality(
    solution: Solution,
    spec: ModelSpec,
    tol_mu: float = 1e-10,
    settings: Optional[EstimateSettings] = None,
) -> BoundCheck:
    """sup over supp m of |D_aL(alpha, mu) + D_xu|."""
    if solution.problem != Problem.P2 or spec.variant != ModelVariant.P2_MONOTONE:
        raise UnsupportedVariantError("the duality check needs problem p2 and a p2_monotone spec")
    settings = settings or EstimateSettings()
    tolerance = 2.0 * tol_mu + settings.duality_constant * spec.grid.h**2
    if solution.scale == 0.0:
        return BoundCheck.evaluate("duality", "D_xu = -D_aL(alpha, mu)", 0.0, tolerance)
    family = _family(solution, spec)
    p = _gradients(solution.u)
    times = spec.mesh.times
    defect = 0.0
    for k, mu in enumerate(solution.mu):
        support = mu.weights > 0
        if not np.any(support):
            continue
        d_alpha = np.asarray(
            family.d_alpha_lagrangian(times[k], mu.positions, mu.controls, mu), dtype=float
        )
        defect = max(defect, float(np.max(np.abs(d_alpha + p[k])[support])))
    return BoundCheck.evaluate("duality", "D_xu = -D_aL(alpha, mu)", defect, tolerance)


def du_energy(solution: Solution, spec: ModelSpec) -> float:
    """int int |D_xu|^q dm dt."""
    weights = trapezoid_weights(spec.grid)
    p = _gradients(solution.u)
    per_level = (np.abs(p) ** spec.q * solution.m.values) @ weights
    return float(trapezoid(per_level, spec.mesh.times))


def _require_problem_one(solution: Solution, spec: ModelSpec, name: str) -> None:
    if solution.problem != Problem.P1 or spec.variant != ModelVariant.P1_QUADRATIC:
        raise UnsupportedVariantError(f"{name} needs problem p1 with a p1_quadratic spec")


def energy_theta(spec: ModelSpec, lam: float) -> float:
    """theta in (0, 1) with lambda1 lam^q' + C0 lambda2 lam^(q'+1) < (1 - theta)^(q'-1) (1 - lam lambda0)^q' / C0^q'.

    The midpoint of the feasible interval; both u bounds and the gradient
    energy bound use it.
    """
    c = spec.constants
    qp = spec.q_prime
    need = (
        c.C0**qp
        * (c.lambda1 * lam**qp + c.C0 * c.lambda2 * lam ** (qp + 1.0))
        / (1.0 - lam * c.lambda0) ** qp
    )
    if need >= 1.0:
        raise SpecRejectedError(
            f"no theta in (0, 1) closes the u bound at scale {lam}: constant chain gives {need:.3e} >= 1"
        )
    return 0.5 * (1.0 - need ** (1.0 / (qp - 1.0)))


def check_du_energy(
    solution: Solution, spec: ModelSpec, settings: Optional[EstimateSettings] = None
) -> BoundCheck:
    """Gradient energy through the energy identity and the coercivity of H (f = 0).

    With a = lambda1 lam^q' C0^q' / (1 - lam lambda0)^q':

    int int |D_xu|^q dm <= (C0^2 (1 + T) + C0 |u| + a theta^(1-q') T) / (1 - a (1 - theta)^(1-q'))
    """
    _require_problem_one(solution, spec, "check_du_energy")
    if spec.c_f != 0.0:
        raise UnsupportedVariantError("check_du_energy needs f = 0 (c_f = 0)")
    settings = settings or EstimateSettings()
    c = spec.constants
    if constant_gap(c, spec.q_prime) <= 0:
        raise SpecRejectedError("A6 constant inequality fails; the gradient energy has no bound")
    lam, T, qp = solution.scale, spec.mesh.T, spec.q_prime
    theta = energy_theta(spec, lam)
    a = c.lambda1 * lam**qp * c.C0**qp / (1.0 - lam * c.lambda0) ** qp
    rhs = (
        c.C0**2 * (1.0 + T)
        + c.C0 * float(np.max(np.abs(solution.u.values)))
        + a * theta ** (1.0 - qp) * T
    ) / (1.0 - a * (1.0 - theta) ** (1.0 - qp))
    return BoundCheck.evaluate(
        "du_energy",
        f"C0^2(1+T) + C0|u| + lambda1 chain, theta={theta:.3g}",
        du_energy(solution, spec),
        rhs,
        _slack(spec, settings.discretization_constant),
    )


def check_u_bound(
    solution: Solution, spec: ModelSpec, settings: Optional[EstimateSettings] = None
) -> BoundCheck:
    """|u| <= |u(T)| + C0 lambda T + lambda int |f| + the lambda2 term through the gradient energy."""
    _require_problem_one(solution, spec, "check_u_bound")
    settings = settings or EstimateSettings()
    c = spec.constants
    lam, T, qp = solution.scale, spec.mesh.T, spec.q_prime
    theta = energy_theta(spec, lam)
    f_sup = np.max(np.abs(_f_path(spec, solution.m)), axis=1)
    rhs = (
        float(np.max(np.abs(solution.u[-1])))
        + c.C0 * lam * T
        + lam * float(trapezoid(f_sup, spec.mesh.times))
    )
    if c.lambda2 > 0 and lam > 0:
        rhs += (
            c.lambda2
            * lam ** (qp + 1.0)
            * c.C0**qp
            * (1.0 - lam * c.lambda0) ** (-qp)
            * (theta ** (1.0 - qp) * T + (1.0 - theta) ** (1.0 - qp) * du_energy(solution, spec))
        )
    return BoundCheck.evaluate(
        "u_bound",
        "sup bound of u from the data and the gradient energy",
        float(np.max(np.abs(solution.u.values))),
        rhs,
        MAX_PRINCIPLE_FLOOR + _slack(spec, settings.discretization_constant),
    )


def check_theta_scaling(
    spec: ModelSpec,
    config: SolverConfig,
    thetas: Sequence[float] = (0.25, 0.5, 1.0),
    band: float = 2.0,
    solution: Optional[Solution] = None,
) -> List[BoundCheck]:
    """|u|/theta, Lambda_inf/theta and |D_xu|/sqrt(theta) stay within band of their theta = 1 values."""
    if config.problem != Problem.P2:
        raise UnsupportedVariantError("theta scaling is a problem p2 check")
    if 1.0 not in thetas or any(s <= 0 or s > 1 for s in thetas):
        raise ValueError("thetas must lie in (0, 1] and contain 1")
    solutions = _scaling_solutions(spec, config, thetas, solution)
    u_ratio, lam_ratio, grad_ratio = [], [], []
    for theta, sol in zip(thetas, solutions):
        u_ratio.append(float(np.max(np.abs(sol.u.values))) / theta)
        lam_ratio.append(max(lambda_q(mu, math.inf) for mu in sol.mu) / theta)
        grad_ratio.append(float(np.max(np.abs(_gradients(sol.u)))) / math.sqrt(theta))
    return [
        _band_check("theta_scaling_u", "|u| <= C theta", thetas, u_ratio, band),
        _band_check("theta_scaling_lambda_inf", "Lambda_inf <= C theta", thetas, lam_ratio, band),
        _band_check("theta_scaling_gradient", "|D_xu| <= C theta^(1/2)", thetas, grad_ratio, band),
    ]


def run_suite(solution: Solution, spec: ModelSpec, config: ExperimentConfig) -> List[BoundCheck]:
    """Default suite for cmd_verify: the assumption audit plus every applicable check."""
    settings = config.estimates
    solver = config.solver
    checks = audit_assumptions(spec, settings.audit_samples, config.seed)
    if solution.report is not None:
        checks.insert(0, check_convergence(solution.report, solver.tol_outer))
    checks.append(check_max_principle(solution, spec, settings=settings))
    checks.append(check_energy_identity(solution, spec, settings))
    checks.append(check_mass_behavior(solution, spec.grid))
    checks.extend(check_lambda_bounds(solution, spec, tol_mu=solver.tol_mu))
    if solver.problem == Problem.P1:
        checks.append(check_u_bound(solution, spec, settings))
        if spec.c_f == 0.0:
            checks.append(check_du_energy(solution, spec, settings))
        if settings.include_scaling:
            checks.append(
                check_gradient_scaling(
                    spec, solver, settings.scaling_values, settings.scaling_band, solution
                )
            )
    else:
        checks.append(check_duality(solution, spec, solver.tol_mu, settings))
        if settings.include_scaling:
            checks.extend(
                check_theta_scaling(
                    spec, solver, settings.scaling_values, settings.theta_band, solution
                )
            )
    failed = [c.name for c in checks if not c.satisfied]
    if failed:
        logger.warning(f"Checks not satisfied: {', '.join(failed)}")
    else:
        logger.info(f"All {len(checks)} checks satisfied")
    return checks
