import copy
from pathlib import Path

import pytest

from mfgc_lab.coupler import solve
from mfgc_lab.hamiltonian import build_spec
from mfgc_lab.models.report import ToleranceCalibration
from mfgc_lab.models.solver import ExperimentConfig, ParticleSettings

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

# small grids keep dt/h = 0.5 like the shipped 128/256 configs
P1_DATA = {
    "model": {
        "variant": "p1_quadratic",
        "kappa": 0.3,
        "nu": 0.2,
        "c_g": 0.1,
        "potential": {"kind": "cosine", "amplitude": 0.05},
        "terminal_base": {"kind": "cosine", "amplitude": 0.1},
        "initial_density": {"kind": "cosine", "amplitude": 0.3, "offset": 1.0},
        "grid": {"n_cells": 32, "boundary": "neumann"},
        "mesh": {"T": 1.0, "n_steps": 64},
    },
    "solver": {"problem": "p1"},
    "estimates": {"include_scaling": False, "audit_samples": 200},
    "seed": 7,
}

P2_DATA = {
    "model": {
        "variant": "p2_monotone",
        "kappa": 0.3,
        "nu": 0.2,
        "c_f": 0.5,
        "c_g": 0.1,
        "potential": {"kind": "zero"},
        "terminal_base": {"kind": "cosine", "amplitude": 0.1},
        "initial_density": {"kind": "cosine", "amplitude": 0.2, "offset": 1.0},
        "grid": {"n_cells": 32, "boundary": "neumann"},
        "mesh": {"T": 1.0, "n_steps": 64},
    },
    "solver": {"problem": "p2"},
    "estimates": {"include_scaling": False, "audit_samples": 200},
    "seed": 7,
}

DECOUPLED_DATA = {
    "model": {
        "variant": "p1_quadratic",
        "kappa": 0.0,
        "nu": 0.2,
        "potential": {"kind": "zero"},
        "terminal_base": {"kind": "constant", "amplitude": 0.5},
        "initial_density": {"kind": "cosine", "amplitude": 0.3, "offset": 1.0},
        "grid": {"n_cells": 16, "boundary": "neumann"},
        "mesh": {"T": 1.0, "n_steps": 32},
    },
    "solver": {"problem": "p1", "damping": 1.0, "continuation_steps": [0.25, 0.5, 1.0]},
    "estimates": {"include_scaling": False, "audit_samples": 100},
}


def make_experiment(data: dict, **model_updates) -> ExperimentConfig:
    data = copy.deepcopy(data)
    data["model"].update(model_updates)
    return ExperimentConfig.model_validate(data)


@pytest.fixture(scope="session")
def p1_experiment():
    return make_experiment(P1_DATA)


@pytest.fixture(scope="session")
def p1_spec(p1_experiment):
    return build_spec(p1_experiment.model)


@pytest.fixture(scope="session")
def p1_solution(p1_spec, p1_experiment):
    return solve(p1_spec, p1_experiment.solver, experiment=p1_experiment)


@pytest.fixture(scope="session")
def p2_experiment():
    return make_experiment(P2_DATA)


@pytest.fixture(scope="session")
def p2_spec(p2_experiment):
    return build_spec(p2_experiment.model)


@pytest.fixture(scope="session")
def p2_solution(p2_spec, p2_experiment):
    return solve(p2_spec, p2_experiment.solver, experiment=p2_experiment)


@pytest.fixture(scope="session")
def decoupled_experiment():
    return make_experiment(DECOUPLED_DATA)


@pytest.fixture(scope="session")
def decoupled_spec(decoupled_experiment):
    return build_spec(decoupled_experiment.model)


@pytest.fixture(scope="session")
def decoupled_solution(decoupled_spec, decoupled_experiment):
    return solve(decoupled_spec, decoupled_experiment.solver, experiment=decoupled_experiment)


@pytest.fixture
def experiment_data():
    """Fresh copies of the raw config dicts, safe to edit in a test."""
    return {
        "p1": copy.deepcopy(P1_DATA),
        "p2": copy.deepcopy(P2_DATA),
        "decoupled": copy.deepcopy(DECOUPLED_DATA),
    }


@pytest.fixture
def build_experiment():
    return make_experiment


@pytest.fixture(scope="session")
def tolerance_calibration():
    text = (GOLDEN_DIR / "particle_tolerance.json").read_text()
    return ToleranceCalibration.model_validate_json(text)


@pytest.fixture(scope="session")
def particle_settings(tolerance_calibration) -> ParticleSettings:
    return tolerance_calibration.apply()
