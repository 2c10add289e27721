import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from mfgc_lab.commands.calibrate import cmd_calibrate
from mfgc_lab.commands.particles import cmd_particles
from mfgc_lab.commands.schema import cmd_schema
from mfgc_lab.commands.solve import cmd_solve
from mfgc_lab.commands.sweep import cmd_sweep
from mfgc_lab.commands.verify import cmd_verify
from mfgc_lab.config import LabSettings

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgc-lab", description="Numerical lab for mean field games of controls."
    )
    parser.add_argument("--log-level", default=None, help="Overrides MFGC_LAB_LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(command, needs_seed: bool = True):
        command.add_argument("--out", type=Path, default=None, help="Output directory.")
        command.add_argument(
            "--threads", type=int, default=None, help="Workers (falls back to MFGC_LAB_THREADS)."
        )
        if needs_seed:
            command.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")

    solve = sub.add_parser("solve", help="Solve one experiment config.")
    solve.add_argument("config", type=Path)
    add_common(solve)

    verify = sub.add_parser("verify", help="Run the estimate suite on a solved directory.")
    verify.add_argument("solution_dir", type=Path)
    add_common(verify, needs_seed=False)

    particles = sub.add_parser("particles", help="Run the particle oracle on a solved directory.")
    particles.add_argument("solution_dir", type=Path)
    particles.add_argument("-n", "--n-particles", type=int, default=None)
    particles.add_argument(
        "--tolerance", type=Path, default=None, help="tolerance.json written by calibrate."
    )
    add_common(particles)

    calibrate = sub.add_parser(
        "calibrate", help="Fit the particle tolerance curve on a zero-drift Neumann run."
    )
    calibrate.add_argument("config", type=Path)
    add_common(calibrate)

    sweep = sub.add_parser("sweep", help="Solve and verify a parameter grid.")
    sweep.add_argument("config", type=Path)
    add_common(sweep, needs_seed=False)

    schema = sub.add_parser("schema", help="Print the config JSON schema.")
    schema.add_argument("--sweep", action="store_true", help="Schema of the sweep config.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = LabSettings()
    logging.basicConfig(
        level=(args.log_level or settings.MFGC_LAB_LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "schema":
        return cmd_schema(sweep=args.sweep)

    threads = args.threads if args.threads is not None else settings.MFGC_LAB_THREADS
    if threads < 1:
        logger.error(f"--threads must be at least 1, got {threads}")
        return 1

    try:
        return _dispatch(args, settings, threads)
    except Exception as e:
        logger.error(f"Unexpected failure in {args.command}: {e}")
        raise


def _dispatch(args: argparse.Namespace, settings: LabSettings, threads: int) -> int:
    if args.command == "solve":
        out_dir = args.out or Path(settings.MFGC_LAB_OUTPUT_DIR) / args.config.stem
        return cmd_solve(args.config, out_dir, seed=args.seed)
    if args.command == "verify":
        return cmd_verify(args.solution_dir, args.out)
    if args.command == "particles":
        return cmd_particles(
            args.solution_dir,
            args.n_particles,
            args.seed,
            threads=threads,
            out_dir=args.out,
            tolerance_file=args.tolerance,
        )
    if args.command == "calibrate":
        out_dir = args.out or Path(settings.MFGC_LAB_OUTPUT_DIR) / args.config.stem
        return cmd_calibrate(args.config, out_dir, seed=args.seed, threads=threads)
    out_dir = args.out or Path(settings.MFGC_LAB_OUTPUT_DIR) / args.config.stem
    return cmd_sweep(args.config, out_dir, threads=threads)


if __name__ == "__main__":
    sys.exit(main())
