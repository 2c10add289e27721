import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from mfgc_lab import storage
from mfgc_lab.coupler import solve
from mfgc_lab.errors import LabError, NonConvergenceError
from mfgc_lab.hamiltonian import build_spec

logger = logging.getLogger(__name__)


def cmd_solve(config_path: Path, out_dir: Path, seed: Optional[int] = None) -> int:
    """Solve one experiment and write u.csv, m.csv, mu.csv and report.json.

    Exit codes: 0 converged, 1 malformed config, 2 spec rejected,
    3 non-convergence (the last iterate and its report are still written).
    """
    try:
        experiment = storage.load_experiment_config(config_path)
        if seed is not None:
            experiment = experiment.model_copy(update={"seed": seed})
        spec = build_spec(experiment.model)
        logger.info(f"Solving {config_path} with problem {experiment.solver.problem.value}")
        solution = solve(spec, experiment.solver, experiment=experiment)
        storage.write_solution(out_dir, solution)
        return 0
    except ValidationError as e:
        logger.error(f"Invalid config {config_path}: {e}")
        return 1
    except NonConvergenceError as e:
        logger.error(f"Solve did not converge: {e.detail}")
        if e.partial is not None:
            storage.write_solution(out_dir, e.partial)
        return e.exit_code
    except LabError as e:
        logger.error(f"Solve failed: {e.detail}")
        return e.exit_code
