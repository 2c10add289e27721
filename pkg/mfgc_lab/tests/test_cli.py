import csv
import json
import shutil
from pathlib import Path

import pytest

from mfgc_lab import storage
from mfgc_lab.commands.calibrate import cmd_calibrate
from mfgc_lab.commands.particles import cmd_particles
from mfgc_lab.commands.schema import cmd_schema
from mfgc_lab.commands.solve import cmd_solve
from mfgc_lab.commands.sweep import apply_assignments, cmd_sweep, expand_points
from mfgc_lab.commands.verify import CHECKS_FAILED, cmd_verify
from mfgc_lab.errors import ConfigurationError
from mfgc_lab.main import main
from mfgc_lab.models.report import ToleranceCalibration
from mfgc_lab.models.solver import SweepConfig
from mfgc_lab.tests.conftest import CONFIG_DIR, DECOUPLED_DATA, P1_DATA

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


def _header(path: Path) -> str:
    return path.read_text().splitlines()[0]


def _golden(name: str) -> str:
    return (GOLDEN_DIR / name).read_text().strip()


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("decoupled")
    assert cmd_solve(CONFIG_DIR / "decoupled.json", out) == 0
    return out


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data))
    return path


def test_solve_writes_the_run_directory(solved_dir):
    for name in (storage.U_FILE, storage.M_FILE, storage.MU_FILE, storage.REPORT_FILE):
        assert (solved_dir / name).exists()
    assert _header(solved_dir / storage.U_FILE) == _golden("u_header.csv")
    assert _header(solved_dir / storage.MU_FILE) == _golden("mu_header.csv")
    report = json.loads((solved_dir / storage.REPORT_FILE).read_text())
    assert report["converged"] is True
    assert [stage["iterations"] for stage in report["stages"]] == [1, 1, 1]
    assert report["config"]["model"]["kappa"] == 0.0


def test_solution_directory_round_trips(solved_dir):
    experiment, spec, solution = storage.load_solution(solved_dir)
    assert experiment.model.grid.n_cells == 64
    assert solution.u.values.shape == (129, 65)
    assert solution.scale == 1.0
    assert len(solution.mu) == 129


def test_rejected_spec_exit_code(tmp_path):
    assert cmd_solve(CONFIG_DIR / "kappa_rejected.json", tmp_path) == 2
    assert not (tmp_path / storage.U_FILE).exists()


def test_malformed_config_exit_code(tmp_path):
    data = json.loads((CONFIG_DIR / "decoupled.json").read_text())
    data["model"]["viscosity"] = 0.2
    assert cmd_solve(_write_json(tmp_path / "bad.json", data), tmp_path / "out") == 1
    assert cmd_solve(tmp_path / "missing.json", tmp_path / "out") == 1


def test_non_convergence_writes_the_last_iterate(tmp_path):
    data = json.loads(json.dumps(P1_DATA))
    data["solver"].update({"max_outer": 1, "tol_outer": 1e-12})
    out = tmp_path / "out"
    assert cmd_solve(_write_json(tmp_path / "tight.json", data), out) == 3
    report = json.loads((out / storage.REPORT_FILE).read_text())
    assert report["converged"] is False
    assert report["message"]


def test_verify(solved_dir, tmp_path):
    assert cmd_verify(solved_dir, tmp_path) == 0
    assert _header(tmp_path / storage.CHECKS_CSV) == _golden("checks_header.csv")
    table = json.loads((tmp_path / storage.CHECKS_JSON).read_text())
    assert table["all_satisfied"] is True
    names = {check["name"] for check in table["checks"]}
    assert {"max_principle", "energy_identity", "mass_conservation", "du_energy"} <= names


def test_verify_reports_failed_checks(solved_dir, tmp_path):
    copy = tmp_path / "tampered"
    shutil.copytree(solved_dir, copy)
    lines = (copy / storage.U_FILE).read_text().splitlines()
    rows = [lines[0]] + [
        line if i != 40 else ",".join(line.split(",")[:2] + ["25"]) for i, line in enumerate(lines[1:])
    ]
    (copy / storage.U_FILE).write_text("\n".join(rows) + "\n")
    assert cmd_verify(copy) == CHECKS_FAILED


def test_verify_refuses_a_non_converged_iterate(solved_dir, tmp_path):
    copy = tmp_path / "partial"
    shutil.copytree(solved_dir, copy)
    report = json.loads((copy / storage.REPORT_FILE).read_text())
    report["converged"] = False
    _write_json(copy / storage.REPORT_FILE, report)
    assert cmd_verify(copy) == CHECKS_FAILED
    table = json.loads((copy / storage.CHECKS_JSON).read_text())
    assert table["checks"][0]["name"] == "outer_residual"
    assert table["checks"][0]["satisfied"] is False


def test_verify_truncated_solution(solved_dir, tmp_path):
    copy = tmp_path / "truncated"
    shutil.copytree(solved_dir, copy)
    lines = (copy / storage.U_FILE).read_text().splitlines()
    (copy / storage.U_FILE).write_text("\n".join(lines[:-1]) + "\n")
    assert cmd_verify(copy) == 1


def test_particles(solved_dir, tmp_path):
    assert cmd_particles(solved_dir, n=2000, seed=1, out_dir=tmp_path) == 0
    report = json.loads((tmp_path / storage.PARTICLES_FILE).read_text())
    assert report["metric"] == "dstar"
    assert report["within_tolerance"] is True
    assert report["n_particles"] == 2000
    trajectories = tmp_path / storage.TRAJECTORIES_FILE
    assert _header(trajectories) == _golden("trajectories_header.csv")
    with open(trajectories, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert {row["alive"] for row in rows} == {"true"}


def test_outputs_are_byte_identical_across_runs(tmp_path):
    runs = [tmp_path / "first", tmp_path / "second"]
    for run in runs:
        assert cmd_solve(CONFIG_DIR / "decoupled.json", run) == 0
        assert cmd_verify(run) == 0
        assert cmd_particles(run, n=1000, seed=2) == 0
    names = (
        storage.U_FILE,
        storage.M_FILE,
        storage.MU_FILE,
        storage.REPORT_FILE,
        storage.CHECKS_CSV,
        storage.CHECKS_JSON,
        storage.PARTICLES_FILE,
        storage.TRAJECTORIES_FILE,
    )
    for name in names:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name


def test_calibrate_writes_a_tolerance_file_the_oracle_accepts(solved_dir, tmp_path):
    data = json.loads((CONFIG_DIR / "calibration_zero_drift.json").read_text())
    data["model"]["grid"]["n_cells"] = 16
    data["model"]["mesh"]["n_steps"] = 32
    config = _write_json(tmp_path / "calibration.json", data)
    assert main(["calibrate", str(config), "--out", str(tmp_path / "cal")]) == 0
    tolerance = tmp_path / "cal" / storage.TOLERANCE_FILE
    calibration = ToleranceCalibration.model_validate_json(tolerance.read_text())
    assert [s.n_particles for s in calibration.samples] == [1000, 4000, 16000]

    committed = GOLDEN_DIR / "particle_tolerance.json"
    out = tmp_path / "oracle"
    assert cmd_particles(solved_dir, n=2000, seed=1, out_dir=out, tolerance_file=committed) == 0
    report = json.loads((out / storage.PARTICLES_FILE).read_text())
    assert report["within_tolerance"] is True

    data["model"]["grid"]["boundary"] = "dirichlet"
    assert cmd_calibrate(_write_json(tmp_path / "walls.json", data), tmp_path / "bad") == 1


def _small_sweep(tmp_path: Path) -> Path:
    data = {
        "base": P1_DATA,
        "parameters": {"model.kappa": [0.2, 1.5], "model.grid.boundary": ["neumann", "dirichlet"]},
    }
    return _write_json(tmp_path / "sweep.json", data)


def test_sweep_rows_and_reproducibility(tmp_path):
    config = _small_sweep(tmp_path)
    assert cmd_sweep(config, tmp_path / "a") == 0
    assert cmd_sweep(config, tmp_path / "b", threads=2) == 0
    first = (tmp_path / "a" / storage.SWEEP_FILE).read_bytes()
    assert first == (tmp_path / "b" / storage.SWEEP_FILE).read_bytes()

    assert _header(tmp_path / "a" / storage.SWEEP_FILE) == _golden("sweep_header.csv")
    with open(tmp_path / "a" / storage.SWEEP_FILE, newline="") as handle:
        rows = list(csv.DictReader(handle))
    convergence = [row for row in rows if row["name"] == "convergence"]
    assert [row["point_id"] for row in convergence] == ["0000", "0001", "0002", "0003"]
    assert [row["status"] for row in convergence] == ["ok", "rejected", "ok", "rejected"]
    assert json.loads(convergence[0]["parameters"]) == {
        "model.grid.boundary": "neumann",
        "model.kappa": 0.2,
    }
    point_ids = [row["point_id"] for row in rows]
    assert point_ids == sorted(point_ids)


def test_sweep_records_the_uniqueness_horizon(tmp_path):
    data = {
        "base": DECOUPLED_DATA,
        "uniqueness_horizon": {"t_lo": 0.25, "t_hi": 1.0, "n_bisect": 1},
    }
    assert cmd_sweep(_write_json(tmp_path / "horizon.json", data), tmp_path / "out") == 0
    with open(tmp_path / "out" / storage.SWEEP_FILE, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert rows[0]["point_id"] == "0000"
    horizon = [row for row in rows if row["point_id"] == "horizon"]
    assert [row["name"] for row in horizon] == ["uniqueness_probe", "uniqueness_horizon"]
    assert horizon[0]["satisfied"] == "true"
    assert float(horizon[-1]["lhs"]) == pytest.approx(1.0)


def test_sweep_points_and_assignments():
    sweep = SweepConfig.model_validate(json.loads((CONFIG_DIR / "sweep_kappa_boundary.json").read_text()))
    points = expand_points(sweep)
    assert len(points) == 6
    assert points[0] == {"model.grid.boundary": "neumann", "model.kappa": 0.1}
    data = apply_assignments(sweep.base.model_dump(mode="json"), points[-1])
    assert data["model"]["grid"]["boundary"] == "dirichlet"
    with pytest.raises(ConfigurationError):
        apply_assignments(data, {"model.viscosity": 1.0})


def test_schema(capsys):
    assert cmd_schema() == 0
    schema = json.loads(capsys.readouterr().out)
    assert "model" in schema["properties"]
    assert main(["schema", "--sweep"]) == 0
    assert "base" in json.loads(capsys.readouterr().out)["properties"]


def test_main_solve(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", str(CONFIG_DIR / "decoupled.json"), "--out", str(out)]) == 0
    assert (out / storage.REPORT_FILE).exists()
    assert main(["verify", str(out), "--threads", "0"]) == 1
