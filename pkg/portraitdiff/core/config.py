"""Configuration management"""
import logging
import yaml
from pathlib import Path
from typing import Any, Dict, List, Optional
from pydantic import ValidationError

from ..errors import ConfigError
from ..models.config import RunConfig

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent.parent / "config" / "presets"


class ConfigManager:
    """Manages profile presets, project config files and overrides"""

    DEFAULT_CONFIG_NAME = "portraitdiff.yaml"

    def __init__(self, project_path: Optional[Path] = None, config_path: Optional[Path] = None):
        self.project_path = project_path or Path.cwd()
        self.config_path = config_path or self.project_path / self.DEFAULT_CONFIG_NAME
        self._config: Optional[RunConfig] = None

    def load(
        self,
        overrides: Optional[List[str]] = None,
        profile: Optional[str] = None,
    ) -> RunConfig:
        """Load configuration: preset -> project file -> dotted overrides"""
        project_dict: Dict[str, Any] = {}
        if self.config_path.exists():
            project_dict = self._read_yaml(self.config_path)

        profile = profile or project_dict.get('profile', 'toy')
        config_dict = self._deep_merge(self.load_preset(profile), project_dict)

        for item in overrides or []:
            key, value = self.parse_override(item)
            self.set_dotted(config_dict, key, value)

        self._config = self.validate(config_dict, source=str(self.config_path))
        return self._config

    def save(self, config: RunConfig) -> None:
        """Save configuration to file"""
        self.config_path.parent.mkdir(parents=True, exist_ok=True)
        config_dict = config.model_dump(exclude_none=True, mode='json')
        with open(self.config_path, 'w') as f:
            yaml.dump(config_dict, f, default_flow_style=False, sort_keys=False)

    def init_project(self, profile: str = 'toy') -> RunConfig:
        """Write a project config seeded from a profile preset"""
        config = self.validate(self.load_preset(profile), source=f"preset '{profile}'")
        self.save(config)
        return config

    @staticmethod
    def load_preset(profile: str) -> Dict[str, Any]:
        preset_path = PRESET_DIR / f"{profile}.yaml"
        if not preset_path.exists():
            raise ConfigError(f"Unknown profile '{profile}' (no preset at {preset_path})")
        return ConfigManager._read_yaml(preset_path)

    @staticmethod
    def validate(config_dict: Dict[str, Any], source: str = "<config>") -> RunConfig:
        try:
            return RunConfig(**config_dict)
        except ValidationError as e:
            problems = []
            for err in e.errors():
                field = ".".join(str(p) for p in err['loc']) or "<root>"
                problems.append(f"{field}: {err['msg']}")
            raise ConfigError(f"Invalid configuration in {source}:\n  " + "\n  ".join(problems))

    @staticmethod
    def _read_yaml(path: Path) -> Dict[str, Any]:
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        except yaml.MarkedYAMLError as e:
            mark = e.problem_mark
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
            raise ConfigError(f"Cannot parse {path} at {where}: {e.problem}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping at the top level")
        return data

    @staticmethod
    def parse_override(item: str) -> tuple:
        """Split 'a.b.c=value' and parse the value as YAML scalar/list"""
        if '=' not in item:
            raise ConfigError(f"Override '{item}' must look like key=value")
        key, raw = item.split('=', 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        return key.strip(), value

    @staticmethod
    def set_dotted(config_dict: Dict[str, Any], key: str, value: Any) -> None:
        keys = key.split('.')
        target = config_dict
        for k in keys[:-1]:
            if k not in target or not isinstance(target[k], dict):
                target[k] = {}
            target = target[k]
        target[keys[-1]] = value

    @staticmethod
    def _deep_merge(dict1: dict, dict2: dict) -> dict:
        """Deep merge dicts"""
        result = dict1.copy()
        for key, value in dict2.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = ConfigManager._deep_merge(result[key], value)
            else:
                result[key] = value
        return result

    @property
    def config(self) -> RunConfig:
        """Get config (lazy load)"""
        if self._config is None:
            self._config = self.load()
        return self._config
