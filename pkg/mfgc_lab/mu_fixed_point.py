"""Per-time-slice fixed point mu = (I, -D_pH(t, ., p(.), mu))#m.

The map alpha -> -D_pH(t, x, p(x), (I, alpha)#m) is iterated from alpha = 0
(mu = m x delta_0). For the concrete families it is a contraction with
ratio scale*kappa*mass (lambda scaling) or kappa*mass (theta scaling).
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mfgc_lab.errors import MonotonicityViolationError, NonContractionError, UnsupportedVariantError
from mfgc_lab.hamiltonian import ModelSpec, ScaledFamily, lambda_scale, theta_scale
from mfgc_lab.measures import ControlMeasure, DiscreteMeasure, lambda_q
from mfgc_lab.models.report import MuSolveReport
from mfgc_lab.models.spec import ModelVariant

logger = logging.getLogger(__name__)

TOL_MU = 1e-10
MAX_ITER_MU = 200
DUAL_START_FACTOR = 10.0


def _as_atom_values(values, m: DiscreteMeasure, label: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != m.positions.shape:
        raise ValueError(f"{label} has {values.size} values for {m.positions.size} atoms")
    return values


def _iterate(
    family: ScaledFamily,
    t: float,
    p: np.ndarray,
    m: DiscreteMeasure,
    alpha0: np.ndarray,
    tol: float,
    max_iter: int,
    damping: float = 1.0,
) -> Tuple[np.ndarray, List[float]]:
    alpha = alpha0
    deltas: List[float] = []
    for _ in range(max_iter):
        mu = ControlMeasure(m.positions, alpha, m.weights)
        fresh = -np.asarray(family.dp_hamiltonian(t, m.positions, p, mu), dtype=float)
        updated = (1.0 - damping) * alpha + damping * fresh
        delta = float(np.max(np.abs(updated - alpha))) if updated.size else 0.0
        deltas.append(delta)
        alpha = updated
        if delta <= tol:
            return alpha, deltas
    raise NonContractionError(
        f"mu fixed point did not reach tol={tol:.1e} in {max_iter} iterations "
        f"(last delta {deltas[-1]:.3e})",
        history=deltas,
    )


def observed_ratio(deltas: Sequence[float], floor: float = 1e-13) -> float:
    """Geometric mean of delta_{k+1}/delta_k over pairs above the noise floor."""
    logs = [
        math.log(b / a) for a, b in zip(deltas, deltas[1:]) if a > floor and b > floor
    ]
    if not logs:
        return 0.0
    return math.exp(sum(logs) / len(logs))


def fixed_point_residual(
    family: ScaledFamily, t: float, p: np.ndarray, mu: ControlMeasure
) -> float:
    if len(mu) == 0:
        return 0.0
    image = -np.asarray(family.dp_hamiltonian(t, mu.positions, p, mu), dtype=float)
    return float(np.max(np.abs(mu.controls - image)))


def _lp_norm(values: np.ndarray, m: DiscreteMeasure, r: float) -> float:
    support = m.weights > 0
    if not np.any(support):
        return 0.0
    magnitudes = np.abs(values[support])
    if math.isinf(r):
        return float(np.max(magnitudes))
    return float(np.sum(m.weights[support] * magnitudes**r) ** (1.0 / r))


def lambda_bound(
    spec: ModelSpec, scale: float, p: np.ndarray, m: DiscreteMeasure, q_tilde: float
) -> float:
    """lambda*C0/(1 - lambda*lambda0) * (1 + || |p|^(q-1) ||_{L^max(q0, q_tilde)(m)})."""
    c = spec.constants
    exponent = max(spec.q0, q_tilde)
    norm = _lp_norm(np.abs(p) ** (spec.q - 1.0), m, exponent)
    return scale * c.C0 / (1.0 - scale * c.lambda0) * (1.0 + norm)


def lambda_qprime_bound_monotone(
    spec: ModelSpec, theta: float, p: np.ndarray, m: DiscreteMeasure
) -> float:
    """Right-hand side of Lambda_{q'}^{q'} <= 4 C0^2 theta^q' + ((q')^(q-1)(2C0)^q/q) theta^q' ||p||^q."""
    c0, q, qp = spec.constants.C0, spec.q, spec.q_prime
    p_norm = _lp_norm(p, m, q)
    return 4.0 * c0**2 * theta**qp + (qp ** (q - 1.0) * (2.0 * c0) ** q / q) * theta**qp * p_norm**q


def lambda_inf_bound_monotone(
    spec: ModelSpec, theta: float, p: np.ndarray, lambda_qprime: float
) -> float:
    p_sup = float(np.max(np.abs(p))) if np.size(p) else 0.0
    return spec.constants.C0 * theta * (1.0 + p_sup + lambda_qprime)


def solve_mu(
    spec: ModelSpec,
    t: float,
    scale: float,
    p_field,
    m: DiscreteMeasure,
    tol_mu: float = TOL_MU,
    max_iter: int = MAX_ITER_MU,
    family: Optional[ScaledFamily] = None,
) -> Tuple[ControlMeasure, MuSolveReport]:
    """Banach iteration for the lambda-scaled relation alpha = -lambda D_pH(p, mu)."""
    family = family or lambda_scale(spec, scale)
    p = _as_atom_values(p_field, m, "p_field")
    alpha, deltas = _iterate(family, t, p, m, np.zeros_like(p), tol_mu, max_iter)
    mu = ControlMeasure(m.positions, alpha, m.weights)
    lam_qp = lambda_q(mu, spec.q_prime)
    lam_inf = lambda_q(mu, math.inf)
    bound_qp = lambda_bound(spec, family.scale, p, m, spec.q_prime)
    bound_inf = lambda_bound(spec, family.scale, p, m, math.inf)
    report = MuSolveReport(
        iterations=sum(1 for d in deltas if d > tol_mu),
        final_delta=deltas[-1],
        observed_ratio=observed_ratio(deltas),
        lambda_qprime=lam_qp,
        lambda_inf=lam_inf,
        lambda_bound=bound_qp,
        bound_satisfied=lam_qp <= bound_qp + tol_mu and lam_inf <= bound_inf + tol_mu,
        residual=fixed_point_residual(family, t, p, mu),
    )
    return mu, report


def solve_mu_monotone(
    spec: ModelSpec,
    t: float,
    theta: float,
    p_field,
    m: DiscreteMeasure,
    tol_mu: float = TOL_MU,
    max_iter: int = MAX_ITER_MU,
    damping: float = 1.0,
) -> Tuple[ControlMeasure, MuSolveReport]:
    """Theta-scaled fixed point with a two-sided uniqueness probe."""
    if spec.variant != ModelVariant.P2_MONOTONE:
        raise UnsupportedVariantError("solve_mu_monotone needs a p2_monotone spec")
    family = theta_scale(spec, theta)
    p = _as_atom_values(p_field, m, "p_field")
    alpha, deltas = _iterate(family, t, p, m, np.zeros_like(p), tol_mu, max_iter, damping)

    bound_qp = lambda_qprime_bound_monotone(spec, theta, p, m)
    start = lambda_inf_bound_monotone(spec, theta, p, bound_qp ** (1.0 / spec.q_prime))
    other, _ = _iterate(family, t, p, m, np.full_like(p, start), tol_mu, max_iter, damping)
    gap = float(np.max(np.abs(alpha - other))) if alpha.size else 0.0
    if gap > DUAL_START_FACTOR * tol_mu:
        raise MonotonicityViolationError(
            f"two starts reached fixed points {gap:.3e} apart at t={t:.6g}", gap=gap
        )

    mu = ControlMeasure(m.positions, alpha, m.weights)
    lam_qp = lambda_q(mu, spec.q_prime)
    lam_inf = lambda_q(mu, math.inf)
    bound_inf = lambda_inf_bound_monotone(spec, theta, p, lam_qp)
    report = MuSolveReport(
        iterations=sum(1 for d in deltas if d > tol_mu),
        final_delta=deltas[-1],
        observed_ratio=observed_ratio(deltas),
        lambda_qprime=lam_qp,
        lambda_inf=lam_inf,
        lambda_bound=bound_qp,
        bound_satisfied=lam_qp**spec.q_prime <= bound_qp + tol_mu and lam_inf <= bound_inf + tol_mu,
        residual=fixed_point_residual(family, t, p, mu),
        dual_start_gap=gap,
    )
    return mu, report


def solve_mu_path(
    spec: ModelSpec,
    family: ScaledFamily,
    p_path: np.ndarray,
    measures: Sequence[DiscreteMeasure],
    tol_mu: float = TOL_MU,
    max_iter: int = MAX_ITER_MU,
) -> Tuple[List[ControlMeasure], List[MuSolveReport]]:
    """Solve every time level; theta scaling goes through the monotone solver."""
    times = spec.mesh.times
    mus: List[ControlMeasure] = []
    reports: List[MuSolveReport] = []
    for k, m in enumerate(measures):
        if family.mode == "theta":
            mu, report = solve_mu_monotone(
                spec, times[k], family.scale, p_path[k], m, tol_mu, max_iter
            )
        else:
            mu, report = solve_mu(
                spec, times[k], family.scale, p_path[k], m, tol_mu, max_iter, family=family
            )
        mus.append(mu)
        reports.append(report)
    return mus, reports
