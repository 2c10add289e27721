import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from mfgc_lab import storage
from mfgc_lab.errors import LabError
from mfgc_lab.hamiltonian import build_spec
from mfgc_lab.particles import calibrate_tolerance

logger = logging.getLogger(__name__)


def cmd_calibrate(
    config_path: Path,
    out_dir: Path,
    seed: Optional[int] = None,
    threads: int = 1,
) -> int:
    """Fit the particle tolerance curve on the config's grid with zero drift; writes tolerance.json."""
    try:
        experiment = storage.load_experiment_config(config_path)
        spec = build_spec(experiment.model)
        calibration = calibrate_tolerance(
            spec,
            n_substeps=experiment.particles.n_substeps,
            seed=experiment.seed if seed is None else seed,
            workers=threads,
        )
        storage.write_model(Path(out_dir) / storage.TOLERANCE_FILE, calibration)
    except ValidationError as e:
        logger.error(f"Invalid config {config_path}: {e}")
        return 1
    except LabError as e:
        logger.error(f"Calibration failed: {e.detail}")
        return e.exit_code
    logger.info(
        f"Calibrated c_stat={calibration.c_stat:.3g} c_h={calibration.c_h:.3g} c_t={calibration.c_t:.3g}"
    )
    return 0
