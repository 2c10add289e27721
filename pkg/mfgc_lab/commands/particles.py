import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from mfgc_lab import storage
from mfgc_lab.commands.verify import CHECKS_FAILED
from mfgc_lab.errors import LabError
from mfgc_lab.models.report import ToleranceCalibration
from mfgc_lab.particles import compare_with_pde, simulate, snapshot_levels

logger = logging.getLogger(__name__)


def cmd_particles(
    solution_dir: Path,
    n: Optional[int] = None,
    seed: Optional[int] = None,
    threads: int = 1,
    out_dir: Optional[Path] = None,
    tolerance_file: Optional[Path] = None,
) -> int:
    """Run the particle oracle on a solved directory; exit 0 iff within tolerance.

    tolerance_file replaces the config's tolerance-curve constants with a
    calibration written by the calibrate command.
    """
    out_dir = out_dir or solution_dir
    try:
        experiment, spec, solution = storage.load_solution(solution_dir)
        settings = experiment.particles
        if tolerance_file is not None:
            settings = storage.load_config(tolerance_file, ToleranceCalibration).apply(settings)
        n = n or settings.n_particles
        seed = experiment.seed if seed is None else seed
        ensembles = simulate(
            spec,
            solution,
            n,
            settings.n_substeps,
            seed,
            record_levels=snapshot_levels(spec.mesh.n_steps, settings.snapshot_levels),
            block_size=settings.block_size,
            workers=threads,
        )
        report = compare_with_pde(spec, solution, ensembles, settings)
        storage.write_particles(out_dir, report, ensembles, settings.snapshot_particles)
    except ValidationError as e:
        logger.error(f"Invalid tolerance file {tolerance_file}: {e}")
        return 1
    except LabError as e:
        logger.error(f"Particle oracle failed: {e.detail}")
        return e.exit_code
    return 0 if report.within_tolerance else CHECKS_FAILED
