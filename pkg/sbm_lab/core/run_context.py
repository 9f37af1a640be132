"""
Run directory handle passed to experiments.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from sbm_lab.utils.io import write_csv, write_json, write_jsonl

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    """Where an experiment writes, and the identifiers stamped on every file."""
    experiment: str
    run_dir: Path
    seed: int
    config_hash: str
    workers: int = 1

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        self.written: List[Path] = []

    @property
    def meta(self) -> Dict[str, Any]:
        return {"experiment": self.experiment, "config_hash": self.config_hash, "seed": self.seed}

    def _track(self, path: Path) -> Path:
        self.written.append(path)
        logger.debug(f"Wrote {path}")
        return path

    def csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
            meta: Optional[Dict[str, Any]] = None) -> Path:
        return self._track(write_csv(self.run_dir / name, columns, rows, {**self.meta, **(meta or {})}))

    def json(self, name: str, obj: Any) -> Path:
        return self._track(write_json(self.run_dir / name, obj))

    def jsonl(self, name: str, records: Iterable[Mapping[str, Any]],
              header: Optional[Mapping[str, Any]] = None) -> Path:
        return self._track(write_jsonl(self.run_dir / name, records, {**self.meta, **(header or {})}))

    def path(self, name: str) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        return self._track(self.run_dir / name)
