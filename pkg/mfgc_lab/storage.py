"""Reading and writing run directories.

Every file is written to a temporary sibling first and moved into place
with os.replace, so a killed run never leaves a half-written file behind.
"""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from mfgc_lab.coupler import Solution
from mfgc_lab.errors import ConfigurationError, SolutionFileError
from mfgc_lab.grid import FieldPath
from mfgc_lab.hamiltonian import ModelSpec, build_spec
from mfgc_lab.measures import ControlMeasure
from mfgc_lab.models.report import BoundCheck, CheckTable, ParticleReport, SolveReport, SweepRow
from mfgc_lab.models.solver import ExperimentConfig

logger = logging.getLogger(__name__)

U_FILE = "u.csv"
M_FILE = "m.csv"
MU_FILE = "mu.csv"
REPORT_FILE = "report.json"
CHECKS_CSV = "checks.csv"
CHECKS_JSON = "checks.json"
PARTICLES_FILE = "particles.json"
TRAJECTORIES_FILE = "trajectories.csv"
SWEEP_FILE = "sweep.csv"
TOLERANCE_FILE = "tolerance.json"

CHECK_COLUMNS = ["name", "anchor", "lhs", "rhs", "margin", "satisfied"]
TRAJECTORY_COLUMNS = ["t", "particle_id", "x", "alive"]

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _number(value: float) -> str:
    return f"{float(value):.17g}"


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(temp, path)
    except Exception as e:
        logger.error(f"Failed to write {path}: {e}")
        if os.path.exists(temp):
            os.remove(temp)
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def load_config(path: Path, model: Type[ConfigT]) -> ConfigT:
    """Parse a JSON config; unknown keys and bad values raise ValidationError."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}")
    return model.model_validate_json(text)


def load_experiment_config(path: Path) -> ExperimentConfig:
    return load_config(path, ExperimentConfig)


def write_field_csv(path: Path, field: FieldPath, column: str) -> None:
    times = field.mesh.times
    nodes = field.grid.nodes
    rows = (
        (_number(times[k]), _number(nodes[i]), _number(field.values[k, i]))
        for k in range(len(field))
        for i in range(nodes.size)
    )
    atomic_write_text(path, _csv_text(["t", "x", column], rows))


def write_mu_csv(path: Path, mu: Sequence[ControlMeasure], times: np.ndarray) -> None:
    rows = (
        (_number(times[k]), _number(x), _number(a), _number(w))
        for k, measure in enumerate(mu)
        for x, a, w in zip(measure.positions, measure.controls, measure.weights)
    )
    atomic_write_text(path, _csv_text(["t", "x", "alpha", "w"], rows))


def write_model(path: Path, model: BaseModel) -> None:
    atomic_write_text(path, model.model_dump_json(indent=2) + "\n")


def write_solution(out_dir: Path, solution: Solution) -> None:
    out_dir = Path(out_dir)
    write_field_csv(out_dir / U_FILE, solution.u, "u")
    write_field_csv(out_dir / M_FILE, solution.m, "m")
    write_mu_csv(out_dir / MU_FILE, solution.mu, solution.u.mesh.times)
    if solution.report is not None:
        write_model(out_dir / REPORT_FILE, solution.report)
    logger.info(f"Solution written to {out_dir}")


def write_checks(out_dir: Path, checks: List[BoundCheck]) -> CheckTable:
    out_dir = Path(out_dir)
    table = CheckTable(all_satisfied=all(c.satisfied for c in checks), checks=checks)
    rows = (
        (c.name, c.anchor, _number(c.lhs), _number(c.rhs), _number(c.margin), str(c.satisfied).lower())
        for c in checks
    )
    atomic_write_text(out_dir / CHECKS_CSV, _csv_text(CHECK_COLUMNS, rows))
    write_model(out_dir / CHECKS_JSON, table)
    logger.info(f"Check table written to {out_dir}")
    return table


def write_particles(out_dir: Path, report: ParticleReport, ensembles, n_snapshot: int) -> None:
    out_dir = Path(out_dir)
    write_model(out_dir / PARTICLES_FILE, report)
    rows = []
    for ensemble in ensembles:
        for i in range(min(n_snapshot, ensemble.n_total)):
            alive = not np.isnan(ensemble.positions[i])
            x = _number(ensemble.positions[i]) if alive else ""
            rows.append((_number(ensemble.t), i, x, str(alive).lower()))
    atomic_write_text(out_dir / TRAJECTORIES_FILE, _csv_text(TRAJECTORY_COLUMNS, rows))
    logger.info(f"Particle report written to {out_dir}")


def write_sweep(path: Path, rows: List[SweepRow]) -> None:
    columns = list(SweepRow.model_fields)
    body = []
    for row in rows:
        values = row.model_dump()
        body.append(
            [
                _number(values[c]) if isinstance(values[c], float)
                else str(values[c]).lower() if isinstance(values[c], bool)
                else values[c]
                for c in columns
            ]
        )
    atomic_write_text(Path(path), _csv_text(columns, body))
    logger.info(f"Sweep table with {len(rows)} rows written to {path}")


def _read_table(path: Path, columns: List[str]) -> np.ndarray:
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != columns:
                raise SolutionFileError(f"{path.name} has header {header}, expected {columns}")
            return np.array([[float(v) for v in row] for row in reader], dtype=float)
    except OSError as e:
        raise SolutionFileError(f"cannot read {path}: {e}")
    except ValueError as e:
        raise SolutionFileError(f"{path.name} holds a non-numeric entry: {e}")


def _reshape(table: np.ndarray, shape: Tuple[int, int], name: str) -> np.ndarray:
    if table.ndim != 2 or table.shape[0] != shape[0] * shape[1]:
        raise SolutionFileError(
            f"{name} has {table.shape[0] if table.ndim == 2 else 0} rows, expected {shape[0] * shape[1]}"
        )
    return table.reshape(shape[0], shape[1], table.shape[1])


def load_solution(solution_dir: Path) -> Tuple[ExperimentConfig, ModelSpec, Solution]:
    """Rebuild config, spec and solution from a cmd_solve output directory."""
    solution_dir = Path(solution_dir)
    try:
        report = SolveReport.model_validate_json((solution_dir / REPORT_FILE).read_text())
    except OSError as e:
        raise SolutionFileError(f"cannot read {REPORT_FILE}: {e}")
    except ValidationError as e:
        raise SolutionFileError(f"{REPORT_FILE} is corrupt: {e}")
    if report.config is None:
        raise SolutionFileError(f"{REPORT_FILE} does not embed the experiment config")
    if not report.converged:
        logger.warning(f"{solution_dir} holds a non-converged iterate")

    experiment = report.config
    spec = build_spec(experiment.model)
    grid, mesh = spec.grid, spec.mesh
    shape = (mesh.n_steps + 1, grid.n_nodes)
    u = _reshape(_read_table(solution_dir / U_FILE, ["t", "x", "u"]), shape, U_FILE)
    m = _reshape(_read_table(solution_dir / M_FILE, ["t", "x", "m"]), shape, M_FILE)
    mu_table = _reshape(_read_table(solution_dir / MU_FILE, ["t", "x", "alpha", "w"]), shape, MU_FILE)
    mu = [ControlMeasure(level[:, 1], level[:, 2], level[:, 3]) for level in mu_table]
    solution = Solution(
        u=FieldPath(u[:, :, 2], grid, mesh),
        m=FieldPath(m[:, :, 2], grid, mesh),
        mu=mu,
        report=report,
        problem=report.problem,
        scale=report.final_scale,
    )
    logger.info(f"Loaded solution from {solution_dir}")
    return experiment, spec, solution
