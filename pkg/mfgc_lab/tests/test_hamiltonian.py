import json

import numpy as np
import pytest

from mfgc_lab.errors import ConfigurationError, SpecRejectedError, UnsupportedVariantError
from mfgc_lab.grid import integrate, trapezoid_weights
from mfgc_lab.hamiltonian import (
    audit_assumptions,
    build_spec,
    coupling_f,
    coupling_g,
    derive_constants,
    dp_hamiltonian,
    estimated_drift_bound,
    hamiltonian,
    lagrangian,
    lambda_scale,
    legendre_check,
    monotonicity_integral,
    theta_scale,
)
from mfgc_lab.measures import ControlMeasure
from mfgc_lab.models.solver import ExperimentConfig
from mfgc_lab.models.spec import ModelConstants, ModelVariant
from mfgc_lab.tests.conftest import CONFIG_DIR


@pytest.fixture
def unit_control():
    return ControlMeasure(np.array([0.5]), np.array([-2.0 / 3.0]), np.array([1.0]))


def test_kappa_at_least_one_is_rejected(experiment_data, build_experiment):
    config = build_experiment(experiment_data["p1"], kappa=1.5)
    with pytest.raises(SpecRejectedError) as excinfo:
        build_spec(config.model)
    assert "A7" in excinfo.value.detail
    assert excinfo.value.exit_code == 2


def test_infeasible_declared_constants_are_rejected(experiment_data, build_experiment):
    constants = {"C0": 2.0, "lambda0": 0.3, "lambda1": 1.0, "lambda2": 0.0}
    config = build_experiment(experiment_data["p1"], constants=constants)
    with pytest.raises(SpecRejectedError):
        build_spec(config.model)


def test_monotone_dirichlet_with_terminal_coupling_is_rejected(experiment_data, build_experiment):
    data = experiment_data["p2"]
    data["model"]["grid"]["boundary"] = "dirichlet"
    with pytest.raises(SpecRejectedError):
        build_spec(build_experiment(data).model)


def test_coarse_time_mesh_fails_stability_estimate(experiment_data, build_experiment):
    config = build_experiment(experiment_data["p1"], mesh={"T": 1.0, "n_steps": 2})
    with pytest.raises(ConfigurationError):
        build_spec(config.model)


@pytest.mark.parametrize("n_cells", [32, 128])
def test_dirichlet_specs_pass_the_stability_screen(experiment_data, build_experiment, n_cells):
    data = experiment_data["p1"]
    data["model"]["grid"] = {"n_cells": n_cells, "boundary": "dirichlet"}
    data["model"]["mesh"] = {"T": 1.0, "n_steps": 2 * n_cells}
    spec = build_spec(build_experiment(data).model)
    assert spec.mesh.dt * estimated_drift_bound(spec) / spec.grid.h <= 1.0


def test_shipped_config_builds_with_dirichlet_walls():
    data = json.loads((CONFIG_DIR / "standard_p1_neumann.json").read_text())
    data["model"]["grid"]["boundary"] = "dirichlet"
    spec = build_spec(ExperimentConfig.model_validate(data).model)
    bound = estimated_drift_bound(spec)
    # g vanishes on both walls, so the slope there is nonzero
    assert 0.0 < bound <= spec.grid.h / spec.mesh.dt


def test_derive_constants():
    zeros = np.zeros(5)
    p1 = derive_constants(ModelVariant.P1_QUADRATIC, 0.3, zeros, zeros)
    p2 = derive_constants(ModelVariant.P2_MONOTONE, 0.3, zeros, zeros)
    assert p1 == ModelConstants(C0=2.0, lambda0=0.3, lambda1=0.0, lambda2=0.0)
    assert p2.C0 == pytest.approx(2.0 / 0.7)


def test_initial_density_has_unit_mass(p1_spec):
    assert integrate(p1_spec.initial_density, p1_spec.grid) == pytest.approx(1.0)


def test_dp_hamiltonian_closed_form(experiment_data, build_experiment, unit_control):
    spec = build_spec(build_experiment(experiment_data["p1"], kappa=0.5).model)
    assert dp_hamiltonian(spec, 0.0, 0.5, 1.0, unit_control) == pytest.approx(2.0 / 3.0)


@pytest.mark.parametrize("spec_name", ["p1_spec", "p2_spec"])
def test_dp_hamiltonian_matches_a_difference_quotient(spec_name, request, unit_control):
    spec = request.getfixturevalue(spec_name)
    x = spec.grid.nodes
    p = np.linspace(-2.0, 2.0, x.size)
    eps = 1e-6
    quotient = (
        hamiltonian(spec, 0.0, x, p + eps, unit_control) - hamiltonian(spec, 0.0, x, p - eps, unit_control)
    ) / (2.0 * eps)
    assert np.allclose(dp_hamiltonian(spec, 0.0, x, p, unit_control), quotient, atol=1e-7)


def test_lambda_scaling(p1_spec, unit_control):
    half = lambda_scale(p1_spec, 0.5)
    full = hamiltonian(p1_spec, 0.0, 0.3, 1.2, unit_control)
    assert half.hamiltonian(0.0, 0.3, 1.2, unit_control) == pytest.approx(0.5 * full)
    assert lambda_scale(p1_spec, 0.0).dp_hamiltonian(0.0, 0.3, 1.2, unit_control) == 0.0


def test_theta_zero_is_trivial(p2_spec, unit_control):
    family = theta_scale(p2_spec, 0.0)
    x = p2_spec.grid.nodes
    assert np.array_equal(family.hamiltonian(0.0, x, np.ones_like(x), unit_control), np.zeros_like(x))
    assert family.lagrangian(0.0, 0.5, 0.0, unit_control) == 0.0
    assert family.lagrangian(0.0, 0.5, 0.1, unit_control) == np.inf


def test_theta_scaling_divides_controls(p2_spec, unit_control):
    family = theta_scale(p2_spec, 0.5)
    expected = 0.5 * 0.8 + p2_spec.kappa * unit_control.moment()
    assert family.dp_hamiltonian(0.0, 0.5, 0.8, unit_control) == pytest.approx(expected)


def test_lagrangian_is_monotone_only(p1_spec, unit_control):
    with pytest.raises(UnsupportedVariantError):
        lagrangian(p1_spec, 0.0, 0.5, 1.0, unit_control)


def test_legendre_check_matches_closed_form(p2_spec):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.uniform(0.0, 1.0)
        p = rng.uniform(-2.0, 2.0)
        mu = ControlMeasure(
            rng.uniform(0.0, 1.0, 3), rng.uniform(-1.0, 1.0, 3), rng.dirichlet(np.ones(3))
        )
        probe = legendre_check(p2_spec, 0.0, x, p, mu, 5.0, 1001)
        assert probe.discrepancy <= 2.0 * probe.spacing**2


def test_monotonicity_integral_is_nonnegative(p2_spec):
    rng = np.random.default_rng(1)
    for _ in range(20):
        mu1, mu2 = (
            ControlMeasure(rng.uniform(0, 1, 4), rng.uniform(-2, 2, 4), rng.dirichlet(np.ones(4)))
            for _ in range(2)
        )
        assert monotonicity_integral(p2_spec, mu1, mu2) >= -1e-14


def test_couplings_are_monotone(p2_spec):
    rng = np.random.default_rng(2)
    weights = trapezoid_weights(p2_spec.grid)
    m1 = rng.uniform(0, 2, p2_spec.grid.n_nodes)
    m2 = rng.uniform(0, 2, p2_spec.grid.n_nodes)
    f_gap = np.dot(weights, (coupling_f(p2_spec, 0.0, m1) - coupling_f(p2_spec, 0.0, m2)) * (m1 - m2))
    g_gap = np.dot(weights, (coupling_g(p2_spec, m1) - coupling_g(p2_spec, m2)) * (m1 - m2))
    assert f_gap >= -1e-14
    assert g_gap >= -1e-14


def test_dirichlet_terminal_cost_vanishes_on_the_boundary(experiment_data, build_experiment):
    data = experiment_data["p1"]
    data["model"]["grid"]["boundary"] = "dirichlet"
    spec = build_spec(build_experiment(data).model)
    g = coupling_g(spec, spec.initial_density)
    assert g[0] == 0.0 and g[-1] == 0.0


@pytest.mark.parametrize("spec_name", ["p1_spec", "p2_spec"])
def test_standard_specs_pass_the_assumption_audit(spec_name, request):
    spec = request.getfixturevalue(spec_name)
    checks = audit_assumptions(spec, n_samples=300, seed=3)
    assert checks
    assert all(check.satisfied for check in checks), [c.name for c in checks if not c.satisfied]
