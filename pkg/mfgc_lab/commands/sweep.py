import copy
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path
from typing import Any, Dict, List

from pydantic import ValidationError

from mfgc_lab import storage
from mfgc_lab.coupler import UNIQUENESS_FACTOR, find_uniqueness_horizon, solve
from mfgc_lab.errors import ConfigurationError, LabError, NonConvergenceError, SpecRejectedError
from mfgc_lab.estimates import run_suite
from mfgc_lab.hamiltonian import build_spec
from mfgc_lab.models.report import SweepRow
from mfgc_lab.models.solver import ExperimentConfig, SweepConfig

logger = logging.getLogger(__name__)


def expand_points(sweep: SweepConfig) -> List[Dict[str, Any]]:
    """Cartesian product of the swept values, keys in sorted order."""
    keys = sorted(sweep.parameters)
    return [dict(zip(keys, values)) for values in product(*(sweep.parameters[k] for k in keys))]


def apply_assignments(base: Dict[str, Any], assignments: Dict[str, Any]) -> Dict[str, Any]:
    data = copy.deepcopy(base)
    for path, value in assignments.items():
        *parents, leaf = path.split(".")
        node = data
        for key in parents:
            if not isinstance(node, dict) or not isinstance(node.get(key), dict):
                raise ConfigurationError(f"unknown sweep path {path!r}")
            node = node[key]
        if leaf not in node:
            raise ConfigurationError(f"unknown sweep path {path!r}")
        node[leaf] = value
    return data


def _run_point(point_id: str, assignments: Dict[str, Any], data: Dict[str, Any]) -> List[SweepRow]:
    parameters = json.dumps(assignments, sort_keys=True)

    def outcome(status: str, message: str = "", **values) -> SweepRow:
        return SweepRow(
            point_id=point_id,
            parameters=parameters,
            name="convergence",
            anchor="outer Picard solve",
            status=status,
            message=message,
            **values,
        )

    try:
        experiment = ExperimentConfig.model_validate(data)
        spec = build_spec(experiment.model)
        solution = solve(spec, experiment.solver, experiment=experiment)
    except ValidationError as e:
        return [outcome("invalid", e.errors()[0]["msg"])]
    except SpecRejectedError as e:
        return [outcome("rejected", e.detail)]
    except NonConvergenceError as e:
        return [outcome("non_convergence", e.detail, lhs=e.residuals[-1] if e.residuals else math.nan)]
    except LabError as e:
        return [outcome("error", e.detail)]

    tol = experiment.solver.tol_outer
    residual = solution.report.stages[-1].residuals[-1]
    rows = [outcome("ok", lhs=residual, rhs=tol, margin=tol - residual, satisfied=True)]
    try:
        checks = run_suite(solution, spec, experiment)
    except LabError as e:
        rows.append(
            SweepRow(point_id=point_id, parameters=parameters, name="verify", status="error", message=e.detail)
        )
        return rows
    rows.extend(
        SweepRow(
            point_id=point_id,
            parameters=parameters,
            name=c.name,
            anchor=c.anchor,
            lhs=c.lhs,
            rhs=c.rhs,
            margin=c.margin,
            satisfied=c.satisfied,
        )
        for c in checks
    )
    return rows


def _horizon_rows(sweep: SweepConfig) -> List[SweepRow]:
    probe = sweep.uniqueness_horizon
    base = sweep.base
    threshold = UNIQUENESS_FACTOR * base.solver.tol_outer
    t0, probes = find_uniqueness_horizon(
        base, probe.t_lo, probe.t_hi, probe.n_bisect, probe.n_starts, base.seed
    )
    rows = [
        SweepRow(
            point_id="horizon",
            parameters=json.dumps({"model.mesh.T": horizon}, sort_keys=True),
            name="uniqueness_probe",
            anchor="max pairwise distance across initial guesses",
            lhs=distance,
            rhs=threshold,
            margin=threshold - distance,
            satisfied=distance <= threshold,
        )
        for horizon, distance in sorted(probes)
    ]
    rows.append(
        SweepRow(
            point_id="horizon",
            parameters=json.dumps({"t_hi": probe.t_hi, "t_lo": probe.t_lo}, sort_keys=True),
            name="uniqueness_horizon",
            anchor="largest probed T with a unique solution",
            lhs=t0,
            satisfied=t0 > 0,
        )
    )
    return rows


def cmd_sweep(config_path: Path, out_dir: Path, threads: int = 1) -> int:
    """Solve and verify every sweep point; per-point failures become rows, not exit codes."""
    try:
        sweep = storage.load_config(config_path, SweepConfig)
        base = sweep.base.model_dump(mode="json")
        points = expand_points(sweep)
        payloads = [apply_assignments(base, assignments) for assignments in points]
    except ValidationError as e:
        logger.error(f"Invalid sweep config {config_path}: {e}")
        return 1
    except LabError as e:
        logger.error(f"Sweep setup failed: {e.detail}")
        return e.exit_code

    width = max(4, len(str(len(points))))
    ids = [str(i).zfill(width) for i in range(len(points))]
    logger.info(f"Sweeping {len(points)} points on {threads} worker(s)")
    if threads > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_point, ids, points, payloads))
    else:
        results = [_run_point(*args) for args in zip(ids, points, payloads)]

    rows = [row for point_rows in results for row in point_rows]
    if sweep.uniqueness_horizon is not None:
        rows.extend(_horizon_rows(sweep))
    rows.sort(key=lambda row: row.point_id)
    storage.write_sweep(Path(out_dir) / storage.SWEEP_FILE, rows)
    return 0
