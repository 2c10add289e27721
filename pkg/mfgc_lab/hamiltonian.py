"""Concrete Hamiltonian/Lagrangian families, their couplings and constants.

With Z(mu) the first moment of the control marginal:

* p1_quadratic: H = p^2/2 + kappa * p * Z + phi(x), so D_pH = p + kappa * Z.
* p2_monotone:  L = a^2/2 + kappa * a * Z + phi(x) and its dual
  H = sup_a [-p a - L] = (p + kappa * Z)^2 / 2 - phi(x), D_pH = p + kappa * Z,
  with maximizer a* = -D_pH.

Constants for both families (derive_constants):

* lambda0 = kappa, lambda1 = lambda2 = 0 and L1 = kappa.
* |D_pH| <= |p| + kappa * Lambda <= C0 (1 + |p|) + kappa * Lambda^2 once C0 >= 1 + kappa.
* D_pH * p - H = p^2/2 - phi >= p^2/C0 - C0 once C0 >= max(2, |phi|).
* |H(t, x, 0, mu)| = |phi| <= C0.
* For p2_monotone, L >= (1 - kappa)/2 a^2 - kappa/2 Z^2 - |phi|, which is
  coercive with C0 >= 2/(1 - kappa).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from mfgc_lab.errors import (
    ConfigurationError,
    InvalidMeasureError,
    SpecRejectedError,
    UnsupportedVariantError,
)
from mfgc_lab.grid import Grid1D, TimeMesh, check_shape, gradient, integrate, trapezoid_weights
from mfgc_lab.measures import ControlMeasure, DiscreteMeasure, lambda_q
from mfgc_lab.models.report import BoundCheck
from mfgc_lab.models.solver import Problem
from mfgc_lab.models.spec import ModelConfig, ModelConstants, ModelVariant

logger = logging.getLogger(__name__)

Number = Union[float, np.ndarray]

KERNEL_TRUNCATION = 3.0
NEGATIVE_SLACK = 1e-12


def derive_constants(
    variant: ModelVariant,
    kappa: float,
    potential: np.ndarray,
    terminal_base: np.ndarray,
    c_g: float = 0.0,
) -> ModelConstants:
    c0 = max(
        2.0,
        1.0 + kappa,
        float(np.max(np.abs(potential))),
        float(np.max(np.abs(terminal_base))) + c_g,
    )
    if variant == ModelVariant.P2_MONOTONE:
        c0 = max(c0, 2.0 / (1.0 - kappa))
    return ModelConstants(C0=c0, lambda0=kappa, lambda1=0.0, lambda2=0.0)


def constant_gap(constants: ModelConstants, q_prime: float) -> float:
    """(1 - lambda0)^q' / C0^q' - C0 * lambda2 - lambda1, positive when feasible."""
    c0 = constants.C0
    return (
        (1.0 - constants.lambda0) ** q_prime / c0**q_prime
        - c0 * constants.lambda2
        - constants.lambda1
    )


def _kernel_matrix(grid: Grid1D, width: float) -> np.ndarray:
    x = grid.nodes
    support = KERNEL_TRUNCATION * width
    mass = width * math.sqrt(2.0 * math.pi) * math.erf(KERNEL_TRUNCATION / math.sqrt(2.0))

    def eta(d):
        return np.where(np.abs(d) <= support, np.exp(-0.5 * (d / width) ** 2), 0.0)

    kernel = eta(x[:, None] - x[None, :])
    if grid.is_neumann:
        # image charges across both walls
        kernel += eta(x[:, None] + x[None, :] - 2.0 * grid.x_lo)
        kernel += eta(x[:, None] + x[None, :] - 2.0 * grid.x_hi)
    kernel /= mass
    return kernel * trapezoid_weights(grid)[None, :]


def _cutoff(grid: Grid1D) -> np.ndarray:
    if grid.is_neumann:
        return np.ones(grid.n_nodes)
    s = (grid.nodes - grid.x_lo) / grid.width
    chi = np.sin(np.pi * s)
    chi[0] = chi[-1] = 0.0
    return chi


@dataclass(frozen=True, eq=False)
class ModelSpec:
    variant: ModelVariant
    kappa: float
    nu: float
    grid: Grid1D
    mesh: TimeMesh
    potential: np.ndarray
    terminal_base: np.ndarray
    initial_density: np.ndarray
    c_f: float = 0.0
    c_g: float = 0.0
    kernel_width: float = 0.1
    q: float = 2.0
    q0: float = 2.0
    constants: Optional[ModelConstants] = None
    _kernel: np.ndarray = field(init=False, repr=False)
    _cutoff: np.ndarray = field(init=False, repr=False)
    _potential_slope: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("potential", "terminal_base", "initial_density"):
            values = check_shape(getattr(self, name), self.grid).copy()
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        if not 0.0 <= self.kappa < 1.0:
            raise SpecRejectedError(
                f"kappa={self.kappa} violates A7: the Lipschitz constant L1 = kappa "
                "of D_pH in mu must lie in (0, 1)"
            )
        if self.nu <= 0:
            raise SpecRejectedError(f"nu={self.nu} must be positive")
        if self.variant == ModelVariant.P2_MONOTONE and not self.grid.is_neumann and self.c_g != 0:
            raise SpecRejectedError(
                "p2_monotone with Dirichlet boundary needs c_g = 0: the boundary "
                "cutoff breaks the monotonicity of g"
            )
        if np.any(self.initial_density < -NEGATIVE_SLACK):
            raise InvalidMeasureError("initial density has negative entries")
        if self.constants is None:
            object.__setattr__(
                self,
                "constants",
                derive_constants(
                    self.variant, self.kappa, self.potential, self.terminal_base, self.c_g
                ),
            )
        gap = constant_gap(self.constants, self.q_prime)
        if gap <= 0:
            raise SpecRejectedError(
                "A6 constant inequality lambda1 < (1 - lambda0)^q'/C0^q' - C0*lambda2 "
                f"fails by {-gap:.3e}"
            )
        object.__setattr__(self, "_kernel", _kernel_matrix(self.grid, self.kernel_width))
        object.__setattr__(self, "_cutoff", _cutoff(self.grid))
        object.__setattr__(self, "_potential_slope", gradient(self.potential, self.grid))

    @property
    def q_prime(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def L1(self) -> float:
        return self.kappa

    @property
    def is_monotone(self) -> bool:
        return self.variant == ModelVariant.P2_MONOTONE

    def phi(self, x: Number) -> Number:
        return _out(np.interp(x, self.grid.nodes, self.potential))

    def phi_slope(self, x: Number) -> Number:
        return _out(np.interp(x, self.grid.nodes, self._potential_slope))

    def smooth(self, density: np.ndarray) -> np.ndarray:
        """eta * eta * m by quadrature."""
        return self._kernel @ (self._kernel @ density)

    def smooth_once(self, density: np.ndarray) -> np.ndarray:
        return self._kernel @ density

    def initial_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_density(self.initial_density, self.grid)


def build_spec(config: ModelConfig) -> ModelSpec:
    grid = config.grid
    density = config.initial_density.evaluate(grid)
    mass = integrate(density, grid)
    if mass <= 0:
        raise SpecRejectedError("initial density must have positive mass")
    spec = ModelSpec(
        variant=config.variant,
        kappa=config.kappa,
        nu=config.nu,
        grid=grid,
        mesh=config.mesh,
        potential=config.potential.evaluate(grid),
        terminal_base=config.terminal_base.evaluate(grid),
        initial_density=density / mass,
        c_f=config.c_f,
        c_g=config.c_g,
        kernel_width=config.kernel_width,
        q=config.q,
        q0=config.q0,
        constants=config.constants,
    )
    check_stability_estimate(spec)
    logger.info(
        f"Built {spec.variant.value} spec: kappa={spec.kappa}, nu={spec.nu}, "
        f"{grid.boundary.value}, C0={spec.constants.C0:.4g}"
    )
    return spec


def estimated_drift_bound(spec: ModelSpec) -> float:
    """|D_pH| of the first backward step from the data: D_xg(m0) with no control moment.

    The coupled solve may exceed it; hjb.check_stability sees the real drift.
    """
    slope = gradient(coupling_g(spec, spec.initial_density), spec.grid)
    if spec.grid.is_neumann:
        slope[0] = slope[-1] = 0.0
    return float(np.max(np.abs(slope)))


def check_stability_estimate(spec: ModelSpec) -> None:
    courant = spec.mesh.dt * estimated_drift_bound(spec) / spec.grid.h
    if courant > 1.0:
        raise ConfigurationError(
            f"explicit Hamiltonian step is unstable: dt*|D_xg|/h is {courant:.3f} > 1 "
            "at the terminal time; refine the time mesh"
        )


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def hamiltonian(spec: ModelSpec, t: float, x: Number, p: Number, mu: ControlMeasure) -> Number:
    z = mu.moment()
    p = np.asarray(p, dtype=float)
    if spec.variant == ModelVariant.P1_QUADRATIC:
        value = 0.5 * p**2 + spec.kappa * p * z + spec.phi(x)
    else:
        value = 0.5 * (p + spec.kappa * z) ** 2 - spec.phi(x)
    return _out(value)


def dp_hamiltonian(spec: ModelSpec, t: float, x: Number, p: Number, mu: ControlMeasure) -> Number:
    value = np.asarray(p, dtype=float) + spec.kappa * mu.moment() + np.zeros(np.shape(x))
    return _out(value)


def dx_hamiltonian(spec: ModelSpec, t: float, x: Number, p: Number, mu: ControlMeasure) -> Number:
    slope = np.asarray(spec.phi_slope(x), dtype=float)
    if spec.variant == ModelVariant.P2_MONOTONE:
        slope = -slope
    return _out(slope)


def _require_lagrangian(spec: ModelSpec) -> None:
    if spec.variant != ModelVariant.P2_MONOTONE:
        raise UnsupportedVariantError(
            f"the Lagrangian is only exposed for p2_monotone, not {spec.variant.value}"
        )


def lagrangian(spec: ModelSpec, t: float, x: Number, alpha: Number, mu: ControlMeasure) -> Number:
    _require_lagrangian(spec)
    alpha = np.asarray(alpha, dtype=float)
    return _out(0.5 * alpha**2 + spec.kappa * alpha * mu.moment() + spec.phi(x))


def d_alpha_lagrangian(
    spec: ModelSpec, t: float, x: Number, alpha: Number, mu: ControlMeasure
) -> Number:
    _require_lagrangian(spec)
    return _out(np.asarray(alpha, dtype=float) + spec.kappa * mu.moment())


def rescale_controls(mu: ControlMeasure, factor: float) -> ControlMeasure:
    return ControlMeasure(mu.positions, mu.controls * factor, mu.weights)


@dataclass(frozen=True, eq=False)
class ScaledFamily:
    """Evaluators of the parametrized systems.

    mode "lambda": lambda*H(p, mu) and lambda*D_pH(p, mu).
    mode "theta":  theta*H(p, Theta mu) with Theta dividing controls by theta.
    Both vanish identically at scale 0.
    """

    spec: ModelSpec
    scale: float
    mode: str

    def __post_init__(self):
        if not 0.0 <= self.scale <= 1.0:
            raise ConfigurationError(f"scale={self.scale} must lie in [0, 1]")
        if self.mode not in ("lambda", "theta"):
            raise ConfigurationError(f"unknown scaling mode {self.mode!r}")

    def _inner(self, mu: ControlMeasure) -> ControlMeasure:
        if self.mode == "theta":
            return rescale_controls(mu, 1.0 / self.scale)
        return mu

    def _zeros(self, x: Number, p: Number) -> Number:
        return _out(np.zeros(np.broadcast(np.asarray(x), np.asarray(p)).shape))

    def hamiltonian(self, t: float, x: Number, p: Number, mu: ControlMeasure) -> Number:
        if self.scale == 0.0:
            return self._zeros(x, p)
        return _out(self.scale * np.asarray(hamiltonian(self.spec, t, x, p, self._inner(mu))))

    def dp_hamiltonian(self, t: float, x: Number, p: Number, mu: ControlMeasure) -> Number:
        if self.scale == 0.0:
            return self._zeros(x, p)
        return _out(self.scale * np.asarray(dp_hamiltonian(self.spec, t, x, p, self._inner(mu))))

    def lagrangian(self, t: float, x: Number, alpha: Number, mu: ControlMeasure) -> Number:
        _require_lagrangian(self.spec)
        if self.mode != "theta":
            raise UnsupportedVariantError("the scaled Lagrangian is defined for theta scaling")
        alpha = np.asarray(alpha, dtype=float)
        if self.scale == 0.0:
            return _out(np.where(alpha == 0.0, 0.0, np.inf))
        inner = self._inner(mu)
        return _out(self.scale * np.asarray(lagrangian(self.spec, t, x, alpha / self.scale, inner)))

    def d_alpha_lagrangian(self, t: float, x: Number, alpha: Number, mu: ControlMeasure) -> Number:
        _require_lagrangian(self.spec)
        if self.mode != "theta" or self.scale == 0.0:
            raise UnsupportedVariantError("D_aL is defined for theta scaling with theta > 0")
        alpha = np.asarray(alpha, dtype=float)
        return d_alpha_lagrangian(self.spec, t, x, alpha / self.scale, self._inner(mu))

    @property
    def f_weight(self) -> float:
        return self.scale

    @property
    def terminal_weight(self) -> float:
        return self.scale

    def contraction_constant(self, mass: float) -> float:
        """Lipschitz constant in alpha of the mu fixed-point map for this family."""
        if self.scale == 0.0:
            return 0.0
        if self.mode == "lambda":
            return self.scale * self.spec.kappa * mass
        return self.spec.kappa * mass


def theta_scale(spec: ModelSpec, theta: float) -> ScaledFamily:
    return ScaledFamily(spec, float(theta), "theta")


def lambda_scale(spec: ModelSpec, lam: float) -> ScaledFamily:
    return ScaledFamily(spec, float(lam), "lambda")


def scaled_family(spec: ModelSpec, problem: Problem, scale: float) -> ScaledFamily:
    if problem == Problem.P2:
        return theta_scale(spec, scale)
    return lambda_scale(spec, scale)


def _check_density(m: np.ndarray, spec: ModelSpec) -> np.ndarray:
    m = check_shape(m, spec.grid)
    if np.any(m < -NEGATIVE_SLACK):
        raise InvalidMeasureError(f"density has negative entry {float(m.min()):.3e}")
    return m


def coupling_f(spec: ModelSpec, t: float, m: np.ndarray) -> np.ndarray:
    m = _check_density(m, spec)
    if spec.c_f == 0.0:
        return np.zeros_like(m)
    return spec.c_f * spec.smooth(m)


def coupling_g(spec: ModelSpec, m_T: np.ndarray) -> np.ndarray:
    m_T = _check_density(m_T, spec)
    inner = spec.terminal_base.copy()
    if spec.c_g != 0.0:
        inner = inner + spec.c_g * spec.smooth(m_T)
    return spec._cutoff * inner


@dataclass(frozen=True)
class LegendreProbe:
    sup_value: float
    argmax: float
    discrepancy: float
    spacing: float


def legendre_check(
    spec: ModelSpec,
    t: float,
    x: float,
    p: float,
    mu: ControlMeasure,
    alpha_grid_halfwidth: float,
    n_alpha: int,
) -> LegendreProbe:
    """Brute-force sup over a uniform alpha grid of -p*alpha - L, against H."""
    if n_alpha < 3:
        raise ValueError("n_alpha must be at least 3")
    alphas = np.linspace(-alpha_grid_halfwidth, alpha_grid_halfwidth, n_alpha)
    values = -p * alphas - np.asarray(lagrangian(spec, t, x, alphas, mu))
    best = int(np.argmax(values))
    sup_value = float(values[best])
    closed_form = float(hamiltonian(spec, t, x, p, mu))
    return LegendreProbe(
        sup_value=sup_value,
        argmax=float(alphas[best]),
        discrepancy=abs(sup_value - closed_form),
        spacing=float(alphas[1] - alphas[0]),
    )


def _random_control_measure(
    rng: np.random.Generator, grid: Grid1D, n_atoms: int = 5, control_range: float = 3.0
) -> ControlMeasure:
    positions = rng.uniform(grid.x_lo, grid.x_hi, n_atoms)
    controls = rng.uniform(-control_range, control_range, n_atoms)
    weights = rng.dirichlet(np.ones(n_atoms)) * rng.uniform(0.0, 1.0)
    return ControlMeasure(positions, controls, weights)


def _worst(name: str, anchor: str, lhs: np.ndarray, rhs: np.ndarray, tolerance: float) -> BoundCheck:
    worst = int(np.argmax(lhs - rhs))
    return BoundCheck.evaluate(name, anchor, lhs[worst], rhs[worst], tolerance)


def audit_assumptions(spec: ModelSpec, n_samples: int = 1000, seed: int = 0) -> List[BoundCheck]:
    """Sample the growth, coercivity, Lipschitz and monotonicity assumptions."""
    rng = np.random.default_rng(seed)
    grid = spec.grid
    c = spec.constants
    q, qp = spec.q, spec.q_prime
    xs = rng.uniform(grid.x_lo, grid.x_hi, n_samples)
    ps = rng.uniform(-5.0, 5.0, n_samples)
    measures = [_random_control_measure(rng, grid) for _ in range(n_samples)]
    lam = np.array([lambda_q(mu, spec.q0) for mu in measures])
    dp = np.array([dp_hamiltonian(spec, 0.0, x, p, mu) for x, p, mu in zip(xs, ps, measures)])
    h = np.array([hamiltonian(spec, 0.0, x, p, mu) for x, p, mu in zip(xs, ps, measures)])
    checks = [
        _worst(
            "assumption_dp_h_growth",
            "A4: |D_pH| <= C0(1 + |p|^(q-1)) + lambda0 Lambda_q0^q'",
            np.abs(dp),
            c.C0 * (1.0 + np.abs(ps) ** (q - 1.0)) + c.lambda0 * lam**qp,
            1e-12,
        )
    ]

    # Lipschitz dependence on mu through the controls only
    lip_lhs, lip_rhs = [], []
    for x, p, mu in zip(xs, ps, measures):
        other = ControlMeasure(mu.positions, rng.uniform(-3.0, 3.0, len(mu)), mu.weights)
        difference = ControlMeasure(mu.positions, mu.controls - other.controls, mu.weights)
        lip_lhs.append(abs(dp_hamiltonian(spec, 0.0, x, p, mu) - dp_hamiltonian(spec, 0.0, x, p, other)))
        lip_rhs.append(spec.L1 * lambda_q(difference, spec.q0))
    checks.append(
        _worst(
            "assumption_lipschitz_mu",
            "A7: |D_pH(mu1) - D_pH(mu2)| <= L1 ||a1 - a2||_{L^q0(m)}",
            np.array(lip_lhs),
            np.array(lip_rhs),
            1e-12,
        )
    )

    if spec.variant == ModelVariant.P1_QUADRATIC:
        checks.append(
            _worst(
                "assumption_coercivity",
                "A5: D_pH.p - H >= (|p|^q - lambda1 Lambda_q0^q')/C0 - C0",
                -(dp * ps - h),
                -((np.abs(ps) ** q - c.lambda1 * lam**qp) / c.C0 - c.C0),
                1e-12,
            )
        )
        h0 = np.array([hamiltonian(spec, 0.0, x, 0.0, mu) for x, mu in zip(xs, measures)])
        checks.append(
            _worst(
                "assumption_h_at_zero",
                "A6: |H(t, x, 0, mu)| <= C0 + lambda2 Lambda_q0^q'",
                np.abs(h0),
                c.C0 + c.lambda2 * lam**qp,
                1e-12,
            )
        )
    else:
        alphas = rng.uniform(-5.0, 5.0, n_samples)
        lam_qp = np.array([lambda_q(mu, qp) for mu in measures])
        lag = np.array([lagrangian(spec, 0.0, x, a, mu) for x, a, mu in zip(xs, alphas, measures)])
        checks.append(
            _worst(
                "assumption_lagrangian_coercivity",
                "L >= |a|^q'/C0 - C0(1 + Lambda_q'^q')",
                -lag,
                -(np.abs(alphas) ** qp / c.C0 - c.C0 * (1.0 + lam_qp**qp)),
                1e-12,
            )
        )
        mono = [
            _lagrangian_monotonicity(
                spec, _random_control_measure(rng, grid), _random_control_measure(rng, grid)
            )
            for _ in range(min(n_samples, 100))
        ]
        checks.append(
            BoundCheck.evaluate(
                "assumption_lagrangian_monotone",
                "A8: double integral of L(mu1) - L(mu2) against mu1 - mu2 is >= 0",
                -min(mono),
                0.0,
                1e-12,
            )
        )

    f_gaps, g_gaps = [], []
    weights = trapezoid_weights(grid)
    for _ in range(min(n_samples, 100)):
        m1 = rng.uniform(0.0, 2.0, grid.n_nodes)
        m2 = rng.uniform(0.0, 2.0, grid.n_nodes)
        diff = m1 - m2
        f_gaps.append(float(np.dot(weights, (coupling_f(spec, 0.0, m1) - coupling_f(spec, 0.0, m2)) * diff)))
        if grid.is_neumann or spec.c_g == 0.0:
            g_gaps.append(float(np.dot(weights, (coupling_g(spec, m1) - coupling_g(spec, m2)) * diff)))
    checks.append(
        BoundCheck.evaluate(
            "assumption_f_monotone",
            "A14: integral of (f(m1) - f(m2))(m1 - m2) is >= 0",
            -min(f_gaps),
            0.0,
            1e-12,
        )
    )
    if g_gaps:
        checks.append(
            BoundCheck.evaluate(
                "assumption_g_monotone",
                "A14: integral of (g(m1) - g(m2))(m1 - m2) is >= 0",
                -min(g_gaps),
                0.0,
                1e-12,
            )
        )
    return checks


def _lagrangian_monotonicity(spec: ModelSpec, mu1: ControlMeasure, mu2: ControlMeasure) -> float:
    """Quadrature of the A8 double integral; equals kappa*|Z1 - Z2|^2 for this family."""

    def integral(mu: ControlMeasure) -> float:
        gap = np.asarray(lagrangian(spec, 0.0, mu.positions, mu.controls, mu1)) - np.asarray(
            lagrangian(spec, 0.0, mu.positions, mu.controls, mu2)
        )
        return float(np.dot(mu.weights, gap))

    return integral(mu1) - integral(mu2)


def monotonicity_integral(spec: ModelSpec, mu1: ControlMeasure, mu2: ControlMeasure) -> float:
    _require_lagrangian(spec)
    return _lagrangian_monotonicity(spec, mu1, mu2)
