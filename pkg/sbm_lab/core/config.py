"""
Process-level configuration for sbm-lab.
"""
import os
import logging
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[2]


class LabConfig:
    """Lab configuration management."""

    def __init__(self):
        # Lab settings
        self.debug_mode = os.getenv("LAB_DEBUG_MODE", "false").lower() == "true"
        self.workers = int(os.getenv("LAB_WORKERS", "1"))
        self.run_slow = os.getenv("LAB_RUN_SLOW", "0").lower() in ("1", "true")

        # Directory paths
        self.config_dir = self._resolve_path(
            os.getenv("LAB_CONFIG_DIR"),
            REPO_ROOT / "config"
        )
        self.experiments_dir = self._resolve_path(
            os.getenv("LAB_EXPERIMENTS_DIR"),
            REPO_ROOT / "experiments"
        )
        self.output_dir = self._resolve_path(
            os.getenv("LAB_OUTPUT_DIR"),
            Path.cwd() / "runs"
        )

        # Log configuration on init
        self._log_config()

    def _resolve_path(self, env_path: Optional[str], default: Path) -> Path:
        """Resolve a directory path from environment or default."""
        if env_path:
            return Path(env_path).resolve()
        return default

    def ensure_output_dir(self) -> Path:
        """Create the output directory on first use."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir

    def _log_config(self):
        """Log the current configuration."""
        logger.debug("Lab Configuration:")
        logger.debug(f"  Debug Mode: {self.debug_mode}")
        logger.debug(f"  Workers: {self.workers}")
        logger.debug(f"  Config Directory: {self.config_dir}")
        logger.debug(f"  Experiments Directory: {self.experiments_dir}")
        logger.debug(f"  Output Directory: {self.output_dir}")


# Global configuration instance
config = LabConfig()
