"""
Experiment management for the lab runner.
"""
import importlib.util
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional
from sbm_lab.core.config import config
from sbm_lab.core.errors import ConfigError

# Configure logging
logger = logging.getLogger(__name__)


class ExperimentManager:
    """Discover, load and dispatch experiment modules."""

    def __init__(self, experiments_dir: Optional[Path] = None):
        self.experiments_dir = Path(experiments_dir or config.experiments_dir)
        self.experiments: Dict[str, dict] = {}
        self.functions: Dict[str, Callable] = {}
        self.handlers: Dict[str, Callable] = {}

    def load_experiment(self, filename: str) -> bool:
        """Load a single experiment module."""
        try:
            logger.debug(f"Attempting to load experiment from file: {filename}")

            module_name = f"sbm_lab_experiments.{Path(filename).stem}"
            experiment_path = self.experiments_dir / filename

            if not experiment_path.exists():
                logger.error(f"Experiment file not found: {experiment_path}")
                return False

            spec = importlib.util.spec_from_file_location(module_name, str(experiment_path))
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)

            # Find the decorated function
            experiment_func = None
            for attr_name in dir(module):
                attr = getattr(module, attr_name)
                if hasattr(attr, 'register_experiment'):
                    experiment_func = attr
                    break

            if not experiment_func:
                logger.warning(f"Experiment {filename} has no decorated function with register_experiment")
                return False

            experiment_name = experiment_func.EXPERIMENT_NAME
            self.experiments[experiment_name] = {
                "name": experiment_name,
                "description": experiment_func.EXPERIMENT_DESCRIPTION,
                "schema": experiment_func.EXPERIMENT_SCHEMA,
            }
            self.functions[experiment_name] = experiment_func
            self.handlers[experiment_name] = experiment_func.register_experiment()
            logger.debug(f"Successfully loaded experiment: {experiment_name}")
            return True

        except Exception as e:
            logger.error(f"Failed to load experiment {filename}: {str(e)}", exc_info=True)
            return False

    def load_experiments_from_directory(self) -> List[str]:
        """Load all experiment modules from the experiments directory."""
        loaded = []
        logger.debug(f"Scanning directory for experiments: {self.experiments_dir}")

        for path in sorted(self.experiments_dir.glob("*.py")):
            if not path.name.startswith('__'):
                if self.load_experiment(path.name):
                    loaded.append(path.stem)
                else:
                    logger.warning(f"Failed to load experiment: {path.name}")

        logger.debug(f"Loaded {len(loaded)} experiments: {loaded}")
        return loaded

    def get(self, name: str) -> Callable:
        if name not in self.functions:
            raise ConfigError("subcommand", f"unknown experiment {name!r}; available: {sorted(self.functions)}")
        return self.functions[name]

    def dispatch(self, name: str, arguments: Any, run) -> Dict[str, Any]:
        self.get(name)
        return self.handlers[name](arguments, run)

    def get_experiment_list(self) -> List[dict]:
        """Get the current list of experiments."""
        return [self.experiments[name] for name in sorted(self.experiments)]
