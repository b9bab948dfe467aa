"""Run configuration: INI file sections merged with command-line flags.

Precedence is flag > config file > built-in default, and the source of every
resolved key is kept so that output artifacts can echo exactly how they were
produced.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, IoFailure
from .grpo import GrpoConfig
from .rewards import RewardConfig
from .sim.loop import EnvConfig


def _from_dataclass(cls, skip: tuple[str, ...] = ()) -> dict[str, Any]:
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


# section -> key -> default; the default's type is the key's type
DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0},
    "grpo": _from_dataclass(GrpoConfig, skip=("seed",)),
    "reward": _from_dataclass(RewardConfig),
    "env": _from_dataclass(EnvConfig),
    "dataset": {"sft_fraction": 0.8, "split_by": "record", "width": None, "height": None},
    "forge": {
        "endpoint": None, "model": None, "api_key_env": "VQLA_FORGE_API_KEY", "temperature": 0.0,
        "timeout": 60.0, "max_attempts": 3, "backoff_base": 1.0, "max_inflight": 4,
    },
}
_NULLABLE_INT = {("dataset", "width"), ("dataset", "height")}


def _convert(section: str, key: str, value: Any) -> Any:
    default = DEFAULTS[section][key]
    if value is None:
        return None
    try:
        if (section, key) in _NULLABLE_INT or isinstance(default, int) and not isinstance(default, bool):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, enum.Enum):
            return type(default)(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key} = {value!r} is not a valid {type(default).__name__}",
                          section=section, key=key) from None


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc.strerror or exc}", path=str(path)) from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}", path=str(path)) from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]", path=str(path))
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", path=str(path))
            out.setdefault(section, {})[key] = value
    return out


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    provenance: dict[str, dict[str, str]]
    config_file: str | None = None
    paths: dict[str, str | None] = field(default_factory=dict)

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def grpo(self) -> GrpoConfig:
        return GrpoConfig(**self.values["grpo"], seed=self.get("run", "seed"))

    def reward(self) -> RewardConfig:
        return RewardConfig(**self.values["reward"])

    def env(self) -> EnvConfig:
        return EnvConfig(**self.values["env"])

    def to_json(self) -> dict[str, Any]:
        def plain(v):
            return v.value if isinstance(v, enum.Enum) else v

        return {
            "config_file": self.config_file,
            "values": {s: {k: plain(v) for k, v in kv.items()} for s, kv in self.values.items()},
            "provenance": self.provenance,
            "paths": self.paths,
        }


def resolve(config_path: str | Path | None = None, flags: Mapping[str, Any] | None = None,
            paths: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge defaults, an optional INI file and ``flags`` keyed ``"section.key"``.

    A flag whose value is ``None`` counts as not given.
    """
    from_file = read_config_file(config_path) if config_path is not None else {}
    values: dict[str, dict[str, Any]] = {}
    provenance: dict[str, dict[str, str]] = {}
    for section, keys in DEFAULTS.items():
        values[section], provenance[section] = {}, {}
        for key, default in keys.items():
            flag = (flags or {}).get(f"{section}.{key}")
            if flag is not None:
                value, source = _convert(section, key, flag), "flag"
            elif key in from_file.get(section, {}):
                value, source = _convert(section, key, from_file[section][key]), "config"
            else:
                value, source = default, "default"
            values[section][key] = value
            provenance[section][key] = source
    unknown = set(flags or {}) - {f"{s}.{k}" for s, ks in DEFAULTS.items() for k in ks}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(values, provenance, str(config_path) if config_path is not None else None,
                     {k: (str(v) if v is not None else None) for k, v in (paths or {}).items()})
