"""
Command-line runner: config resolution, dispatch and artifact emission.

Exit codes: 0 success, 1 unexpected experiment error, 2 configuration error,
3 numerical abort (``diagnostics.json`` in the run directory).
"""
import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from sbm_lab import __version__
from sbm_lab.core.config import config
from sbm_lab.core.errors import ConfigError, LabError, NumericalAbort
from sbm_lab.core.experiment_manager import ExperimentManager
from sbm_lab.core.run_context import RunContext
from sbm_lab.utils.config_manager import config_manager
from sbm_lab.utils.io import _plain, config_hash, write_json

logger = logging.getLogger(__name__)

EXPERIMENTS = ("pde", "dual", "branching", "spde", "sde", "duality", "cozero")
HASH_LENGTH = 12


def hashed_config(params) -> dict:
    """The resolved config as hashed: worker count and chunking do not change results."""
    return params.model_dump(mode="json", exclude={"mc": {"workers", "chunk"}})


def run_directory(out_dir: Path, experiment: str, digest: str, seed: int) -> Path:
    return Path(out_dir) / f"{experiment}-{digest[:HASH_LENGTH]}-s{seed}"


def run(config_path: Optional[Path], subcommand: str, overrides: Sequence[str] = (), *,
        preset: Optional[str] = None, seed: Optional[int] = None, paths: Optional[int] = None,
        workers: Optional[int] = None, out_dir: Optional[Path] = None,
        manager: Optional[ExperimentManager] = None, echo: bool = True) -> int:
    """Run one experiment and return the process exit code."""
    run_dir: Optional[Path] = None
    try:
        if manager is None:
            manager = ExperimentManager()
            manager.load_experiments_from_directory()
        experiment_func = manager.get(subcommand)

        resolved = config_manager.resolve(subcommand, preset=preset, config_path=config_path,
                                          overrides=overrides, seed=seed, paths=paths, workers=workers)
        params = experiment_func.validate_input(resolved)
        hashed = hashed_config(params)
        digest = config_hash({"experiment": subcommand, "config": hashed})
        run_dir = run_directory(out_dir or config.output_dir, subcommand, digest, params.mc.seed)
        run_dir.mkdir(parents=True, exist_ok=True)

        write_json(run_dir / "resolved_config.json", {"experiment": subcommand, "config_hash": digest,
                                                     "version": __version__, "config": hashed})
        if echo:
            print(yaml.safe_dump(_plain({"experiment": subcommand, "config_hash": digest[:HASH_LENGTH],
                                         "config": hashed}), sort_keys=True), end="")
        logger.info(f"Running {subcommand} in {run_dir}")

        run_context = RunContext(experiment=subcommand, run_dir=run_dir, seed=params.mc.seed,
                                 config_hash=digest, workers=params.mc.workers)
        result = manager.dispatch(subcommand, params, run_context)
        if result.get("status") != "success":
            logger.error(f"{subcommand} failed: {result.get('error')}")
            write_json(run_dir / "summary.json", result)
            return 1

        write_json(run_dir / "summary.json", result["data"])
        logger.info(f"{subcommand} finished; artifacts: {[p.name for p in run_context.written]}")
        return 0

    except ConfigError as e:
        logger.error(f"Configuration error at {e.field_path}: {e.message}")
        print(f"config error: {e.field_path}: {e.message}", file=sys.stderr)
        return e.exit_code
    except NumericalAbort as e:
        logger.error(f"Numerical abort: {e.message}")
        if run_dir is not None:
            write_json(run_dir / "diagnostics.json", {"error": e.message, "diagnostics": e.diagnostics})
        print(f"numerical abort: {e.message}", file=sys.stderr)
        return e.exit_code
    except LabError as e:
        logger.error(f"{subcommand} failed: {e}")
        return e.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbm_lab", description="Numerical laboratory for SBM with irregular drift")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("experiment", choices=EXPERIMENTS, help="Experiment to run")
    parser.add_argument("--config", type=Path, default=None, help="YAML file merged over the defaults")
    parser.add_argument("--preset", default=None, help="Named preset from config/<experiment>.yaml")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (mc.seed)")
    parser.add_argument("--paths", type=int, default=None, help="Number of Monte Carlo paths (mc.paths)")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes (mc.workers)")
    parser.add_argument("--out-dir", type=Path, default=None, help="Parent of the run directory")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="Dotted override, e.g. grid.N=401 (repeatable)")
    parser.add_argument("--debug", action="store_true", help="Debug logging")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    from sbm_lab.utils.logging_config import configure_logging

    args = build_parser().parse_args(argv)
    configure_logging(debug=args.debug)
    return run(args.config, args.experiment, args.override, preset=args.preset, seed=args.seed,
               paths=args.paths, workers=args.workers, out_dir=args.out_dir)
