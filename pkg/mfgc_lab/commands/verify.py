import logging
from pathlib import Path
from typing import Optional

from mfgc_lab import storage
from mfgc_lab.errors import LabError
from mfgc_lab.estimates import run_suite

logger = logging.getLogger(__name__)

# exit code when the suite ran but a check failed
CHECKS_FAILED = 4


def cmd_verify(solution_dir: Path, out_dir: Optional[Path] = None) -> int:
    out_dir = out_dir or solution_dir
    try:
        experiment, spec, solution = storage.load_solution(solution_dir)
        checks = run_suite(solution, spec, experiment)
        table = storage.write_checks(out_dir, checks)
    except LabError as e:
        logger.error(f"Verification failed: {e.detail}")
        return e.exit_code
    return 0 if table.all_satisfied else CHECKS_FAILED
