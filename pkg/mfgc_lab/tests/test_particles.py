import json
import math

import numpy as np
import pytest

from mfgc_lab.coupler import Solution, solve
from mfgc_lab.errors import ConfigurationError, ShapeError
from mfgc_lab.grid import FieldPath, Grid1D
from mfgc_lab.hamiltonian import build_spec
from mfgc_lab.measures import lambda_q, pushforward
from mfgc_lab.models.solver import ParticleSettings
from mfgc_lab.particles import (
    calibrate_tolerance,
    compare_with_pde,
    density_cdf,
    empirical_measures,
    sample_density,
    simulate,
    snapshot_levels,
    tolerance_curve,
    zero_drift_solution,
)
from mfgc_lab.tests.conftest import CONFIG_DIR


def _linear_value_solution(spec, slope):
    grid, mesh = spec.grid, spec.mesh
    u = FieldPath.constant(slope * grid.nodes, grid, mesh)
    m = FieldPath.constant(spec.initial_density, grid, mesh)
    mu = [pushforward(spec.initial_measure(), 0.0)] * (mesh.n_steps + 1)
    return Solution(u=u, m=m, mu=mu)


@pytest.fixture
def quiet_spec(experiment_data, build_experiment):
    return build_spec(build_experiment(experiment_data["decoupled"], nu=1e-10).model)


@pytest.fixture
def dirichlet_case(experiment_data, build_experiment):
    data = experiment_data["decoupled"]
    data["model"]["grid"]["boundary"] = "dirichlet"
    config = build_experiment(data)
    spec = build_spec(config.model)
    return spec, solve(spec, config.solver)


def test_noise_free_particle_follows_the_feedback(quiet_spec):
    solution = _linear_value_solution(quiet_spec, 0.5)
    ensembles = simulate(
        quiet_spec, solution, 1, 4, seed=0, initial_positions=np.array([0.9]),
        record_levels=[0, quiet_spec.mesh.n_steps],
    )
    assert ensembles[0].positions[0] == 0.9
    assert ensembles[-1].positions[0] == pytest.approx(0.4, abs=1e-3)
    assert ensembles[-1].controls[0] == pytest.approx(-0.5)


def test_same_seed_same_paths(p1_spec, p1_solution):
    first = simulate(p1_spec, p1_solution, 300, 2, seed=9, record_levels=[0, 64], block_size=64)
    second = simulate(p1_spec, p1_solution, 300, 2, seed=9, record_levels=[0, 64], block_size=64)
    other = simulate(p1_spec, p1_solution, 300, 2, seed=10, record_levels=[0, 64], block_size=64)
    assert np.array_equal(first[-1].positions, second[-1].positions)
    assert not np.array_equal(first[-1].positions, other[-1].positions)


def test_worker_count_does_not_change_paths(p1_spec, p1_solution):
    serial = simulate(p1_spec, p1_solution, 300, 2, seed=9, record_levels=[64], block_size=64)
    pooled = simulate(
        p1_spec, p1_solution, 300, 2, seed=9, record_levels=[64], block_size=64, workers=2
    )
    assert np.array_equal(serial[0].positions, pooled[0].positions)


def test_reflected_particles_stay_in_the_domain(p1_spec, p1_solution):
    ensembles = simulate(p1_spec, p1_solution, 1000, 2, seed=1, record_levels=range(0, 65, 8))
    grid = p1_spec.grid
    for ensemble in ensembles:
        assert ensemble.live_fraction == 1.0
        assert ensemble.positions.min() >= grid.x_lo
        assert ensemble.positions.max() <= grid.x_hi


def test_neumann_oracle(p1_spec, p1_solution, particle_settings):
    ensembles = simulate(p1_spec, p1_solution, 4000, 4, seed=3, record_levels=[0, 64])
    report = compare_with_pde(p1_spec, p1_solution, ensembles, particle_settings)
    assert report.metric == "dstar"
    assert report.within_tolerance
    assert report.details["w1"] <= report.tolerance
    assert 0.0 <= report.details["ks_pvalue"] <= 1.0


def test_dirichlet_oracle(dirichlet_case):
    spec, solution = dirichlet_case
    n_steps = spec.mesh.n_steps
    ensembles = simulate(spec, solution, 4000, 8, seed=5, record_levels=[0, n_steps])
    report = compare_with_pde(spec, solution, ensembles)
    assert report.metric == "absorbed_fraction_gap"
    assert report.boundary == "dirichlet"
    assert report.live_fraction < 1.0
    assert np.all(np.isnan(ensembles[-1].controls[~ensembles[-1].alive]))
    assert report.within_tolerance


def test_empirical_mass_is_the_live_fraction(dirichlet_case):
    spec, solution = dirichlet_case
    ensembles = simulate(spec, solution, 500, 8, seed=2, record_levels=[0, 16, 32])
    states, controls = empirical_measures(ensembles, solution, spec.grid)
    for ensemble, state, control in zip(ensembles, states, controls):
        assert state.total_mass() == pytest.approx(ensemble.live_fraction)
        assert control.total_mass() == pytest.approx(ensemble.live_fraction)


def test_particles_at_one_point_give_one_atom(p1_spec, p1_solution):
    ensembles = simulate(
        p1_spec, p1_solution, 50, 1, seed=0, initial_positions=np.full(50, 0.5), record_levels=[0]
    )
    states, _ = empirical_measures(ensembles, p1_solution, p1_spec.grid)
    assert np.array_equal(states[0].positions, [0.5])
    assert states[0].weights[0] == pytest.approx(1.0)


def test_empirical_controls_respect_the_solver_bound(p1_spec, p1_solution):
    ensembles = simulate(p1_spec, p1_solution, 1000, 2, seed=4, record_levels=[0, 32, 64])
    _, controls = empirical_measures(ensembles, p1_solution, p1_spec.grid)
    for ensemble, control in zip(ensembles, controls):
        solver_bound = lambda_q(p1_solution.mu[ensemble.level], math.inf)
        assert lambda_q(control, math.inf) <= solver_bound + 1e-6


def test_empirical_measures_need_the_solution_grid(p1_solution):
    with pytest.raises(ShapeError):
        empirical_measures([], p1_solution, Grid1D(n_cells=8))


def test_sampling_follows_the_density():
    grid = Grid1D(n_cells=16)
    u = np.random.default_rng(0).random(20000)
    uniform = sample_density(np.ones(grid.n_nodes), grid, u)
    linear = sample_density(2.0 * grid.nodes, grid, u)
    assert uniform.mean() == pytest.approx(0.5, abs=0.01)
    assert linear.mean() == pytest.approx(2.0 / 3.0, abs=0.01)
    assert linear.min() >= 0.0 and linear.max() <= 1.0


def test_density_cdf_reaches_one():
    grid = Grid1D(n_cells=16)
    cdf = density_cdf(2.0 * grid.nodes, grid)
    assert cdf(0.0) == pytest.approx(0.0)
    assert cdf(0.5) == pytest.approx(0.25)
    assert cdf(1.0) == pytest.approx(1.0)


def test_too_few_substeps(experiment_data, build_experiment):
    spec = build_spec(build_experiment(experiment_data["decoupled"], nu=2.0).model)
    solution = _linear_value_solution(spec, 0.0)
    with pytest.raises(ConfigurationError):
        simulate(spec, solution, 10, 1, seed=0)


def test_initial_positions_are_validated(p1_spec, p1_solution):
    with pytest.raises(ShapeError):
        simulate(p1_spec, p1_solution, 3, 1, seed=0, initial_positions=np.zeros(2))
    with pytest.raises(ConfigurationError):
        simulate(p1_spec, p1_solution, 2, 1, seed=0, initial_positions=np.array([0.5, 1.5]))


def test_tolerance_curve_and_snapshots():
    assert tolerance_curve(100, 0.1, 0.04) == pytest.approx(0.095)
    levels = snapshot_levels(64, 16)
    assert levels[0] == 0 and levels[-1] == 64
    assert len(levels) == 17


@pytest.fixture
def calibration_spec(build_experiment):
    data = json.loads((CONFIG_DIR / "calibration_zero_drift.json").read_text())
    data["model"]["grid"]["n_cells"] = 32
    data["model"]["mesh"]["n_steps"] = 64
    return build_spec(build_experiment(data).model)


def test_default_tolerance_is_the_committed_calibration(tolerance_calibration):
    defaults = ParticleSettings()
    assert (defaults.c_stat, defaults.c_h, defaults.c_t) == (
        tolerance_calibration.c_stat,
        tolerance_calibration.c_h,
        tolerance_calibration.c_t,
    )


def test_fresh_calibration_stays_under_the_committed_curve(calibration_spec, particle_settings):
    calibration = calibrate_tolerance(calibration_spec, sizes=(500, 2000), seed=4)
    grid, mesh = calibration_spec.grid, calibration_spec.mesh
    assert calibration.h == grid.h and calibration.dt == mesh.dt
    assert [s.n_particles for s in calibration.samples] == [500, 2000]
    for sample in calibration.samples:
        assert sample.dstar <= tolerance_curve(sample.n_particles, grid.h, mesh.dt, particle_settings)
    assert calibration.c_stat >= 0.0 and calibration.c_h == calibration.c_t
    settings = calibration.apply(ParticleSettings(n_particles=10))
    assert settings.n_particles == 10 and settings.c_stat == calibration.c_stat


def test_calibration_needs_reflecting_walls(experiment_data, build_experiment, calibration_spec):
    data = experiment_data["decoupled"]
    data["model"]["grid"]["boundary"] = "dirichlet"
    with pytest.raises(ConfigurationError):
        calibrate_tolerance(build_spec(build_experiment(data).model))
    with pytest.raises(ValueError):
        calibrate_tolerance(calibration_spec, sizes=(1000,))


def test_zero_drift_particles_pass_a_ks_test(calibration_spec):
    # folding reflection of driftless Brownian motion is exact in law
    solution = zero_drift_solution(calibration_spec)
    n_steps = calibration_spec.mesh.n_steps
    ensembles = simulate(calibration_spec, solution, 4000, 2, seed=12, record_levels=[n_steps])
    assert np.all(ensembles[-1].controls == 0.0)
    report = compare_with_pde(calibration_spec, solution, ensembles)
    assert report.details["ks_pvalue"] > 1e-3
    assert report.within_tolerance
