"""
Configuration management for experiments.

Resolution order, later wins: ``config/<experiment>.yaml`` defaults, a named
preset from the same file, a ``--config`` file, environment overrides
``<EXPERIMENT>__<KEY>__<SUBKEY>=value``, then ``--override key=value`` flags.
"""
import os
import copy
import yaml
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional
from dotenv import load_dotenv
from sbm_lab.core.config import config
from sbm_lab.core.errors import ConfigError

logger = logging.getLogger(__name__)


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _match_key(mapping: Dict[str, Any], key: str) -> str:
    # env var names are case-folded; reuse the spelling already in the config
    for existing in mapping:
        if existing.lower() == key.lower():
            return existing
    return key


def set_dotted(mapping: Dict[str, Any], path: List[str], value: Any) -> None:
    node = mapping
    for part in path[:-1]:
        part = _match_key(node, part)
        child = node.get(part)
        if not isinstance(child, dict):
            child = node[part] = {}
        node = child
    node[_match_key(node, path[-1])] = value


def parse_scalar(text: str) -> Any:
    """YAML scalar parsing, so ``201`` is an int, ``true`` a bool and ``.inf`` a float."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


class ConfigManager:
    """Manages experiment configurations."""

    def __init__(self):
        self._cache: Dict[str, Any] = {}
        self.env_overrides: Dict[str, Dict[str, str]] = {}

        # Load environment variables
        load_dotenv()

        # Cache environment overrides
        self._cache_env_overrides()

    def _cache_env_overrides(self):
        """Cache all environment variables that could override experiment configs."""
        for key in os.environ:
            # Format: EXPERIMENT__KEY__SUBKEY=value (double underscore separator)
            if '__' in key and not key.startswith('__'):
                experiment_name, config_key = key.lower().split('__', 1)
                if experiment_name not in self.env_overrides:
                    self.env_overrides[experiment_name] = {}
                self.env_overrides[experiment_name][config_key] = os.getenv(key)

    def get_experiment_config(self, experiment_name: str, refresh: bool = False) -> Dict[str, Any]:
        """Get the raw ``{defaults, presets}`` file content for an experiment."""
        if not refresh and experiment_name in self._cache:
            return self._cache[experiment_name]

        config_path = config.config_dir / f"{experiment_name}.yaml"
        if not config_path.exists():
            logger.debug(f"No config file for {experiment_name} at {config_path}")
            self._cache[experiment_name] = {}
            return {}

        experiment_config = self._read_yaml(config_path, "config")
        self._cache[experiment_name] = experiment_config
        return experiment_config

    @staticmethod
    def _read_yaml(path: Path, field_path: str) -> Dict[str, Any]:
        try:
            with open(path) as f:
                content = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(field_path, f"cannot read {path}: {e}") from e
        if not isinstance(content, dict):
            raise ConfigError(field_path, f"{path} must hold a mapping")
        return content

    def get_defaults(self, experiment_name: str) -> Dict[str, Any]:
        return copy.deepcopy(self.get_experiment_config(experiment_name).get("defaults") or {})

    def get_preset(self, experiment_name: str, preset: str) -> Dict[str, Any]:
        presets = self.get_experiment_config(experiment_name).get("presets") or {}
        if preset not in presets:
            raise ConfigError("preset", f"unknown preset {preset!r} for {experiment_name}; "
                                        f"available: {sorted(presets)}")
        return copy.deepcopy(presets[preset] or {})

    def list_presets(self, experiment_name: str) -> List[str]:
        return sorted(self.get_experiment_config(experiment_name).get("presets") or {})

    def resolve(self, experiment_name: str, *, preset: Optional[str] = None,
                config_path: Optional[Path] = None, overrides: Iterable[str] = (),
                seed: Optional[int] = None, paths: Optional[int] = None,
                workers: Optional[int] = None) -> Dict[str, Any]:
        """Merge every configuration layer into one nested mapping."""
        resolved = self.get_defaults(experiment_name)
        if preset:
            resolved = deep_merge(resolved, self.get_preset(experiment_name, preset))
        if config_path:
            resolved = deep_merge(resolved, self._read_yaml(Path(config_path), "config"))

        for key, value in sorted(self.env_overrides.get(experiment_name, {}).items()):
            logger.debug(f"Environment override {experiment_name}.{key.replace('__', '.')}")
            set_dotted(resolved, key.split('__'), parse_scalar(value))

        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError("override", f"expected key=value, got {item!r}")
            set_dotted(resolved, key.strip().split("."), parse_scalar(value))

        for key, value in (("seed", seed), ("paths", paths), ("workers", workers)):
            if value is not None:
                set_dotted(resolved, ["mc", key], value)
        return resolved

    def clear_cache(self):
        """Clear the configuration cache."""
        self._cache.clear()


# Global config manager instance
config_manager = ConfigManager()
