"""
Deterministic writers for run artifacts.

CSV files start with ``# key: value`` comment lines (config hash, seed, level);
floats are written with ``repr`` so reruns are byte-identical. JSON is written
with sorted keys.
"""
import csv
import json
import hashlib
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {format_value(value)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([format_value(v) for v in row] for row in rows)
    return path


def read_csv(path: Path) -> Tuple[Dict[str, str], List[str], np.ndarray]:
    """Inverse of ``write_csv`` for numeric tables."""
    meta: Dict[str, str] = {}
    body: List[str] = []
    with Path(path).open(encoding="utf-8", newline="") as f:
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
    columns = next(csv.reader(body[:1]), [])
    if len(body) < 2:
        return meta, columns, np.empty((0, len(columns)))
    data = np.loadtxt(body[1:], delimiter=",", dtype=float, ndmin=2)
    return meta, columns, data


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]],
                header: Optional[Mapping[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if header is not None:
        lines.append(json.dumps(_plain({"header": header}), sort_keys=True))
    lines.extend(json.dumps(_plain(record), sort_keys=True) for record in records)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path
