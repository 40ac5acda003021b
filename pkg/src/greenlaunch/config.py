"""Versioned INI configuration files.

Layout::

    [greenlaunch]
    schema_version = 1

    [sim]
    R_max = 10
    lambda_load = 1.2

    [agent]
    offline_steps = 5000

    [experiment]
    id = offline_vs_bc
    seeds = 0, 1

Every section is optional; missing keys keep their defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path
from typing import Optional

from .agents import AgentConfig
from .sim import ConfigError, SimConfig, config_from_mapping

__all__ = [
    "SCHEMA_VERSION",
    "read_ini",
    "load_sim_config",
    "load_agent_config",
    "agent_config_from_mapping",
    "write_config",
    "format_value",
]

SCHEMA_VERSION = 1
META_SECTION = "greenlaunch"


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys such as R_max are case-sensitive
    return cp


def read_ini(path) -> dict[str, dict[str, str]]:
    """Parse ``path`` into ``{section: {key: raw string}}`` after checking the schema version."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = _parser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    version = cp.get(META_SECTION, "schema_version", fallback=None)
    if version is None:
        raise ConfigError(f"{path}: missing [{META_SECTION}] schema_version")
    if int(version) != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    return {name: dict(cp[name]) for name in cp.sections() if name != META_SECTION}


def load_sim_config(path, base: Optional[SimConfig] = None) -> SimConfig:
    return config_from_mapping(read_ini(path).get("sim", {}), base)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_like(raw: str, default):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(p) for p in raw.strip("()").split(",") if p.strip())
    if default is None:
        # optional numeric fields
        try:
            return int(raw)
        except ValueError:
            return float(raw)
    return raw


def agent_config_from_mapping(values: dict, base: Optional[AgentConfig] = None) -> AgentConfig:
    base = base or AgentConfig()
    current = base.to_dict()
    for key, raw in values.items():
        if key not in current:
            raise ConfigError(f"unknown agent config key {key!r}")
        if isinstance(raw, str):
            try:
                raw = _parse_like(raw, current[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        current[key] = raw
    try:
        return AgentConfig(**current)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_agent_config(path, base: Optional[AgentConfig] = None) -> AgentConfig:
    return agent_config_from_mapping(read_ini(path).get("agent", {}), base)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def write_config(path, sim: Optional[SimConfig] = None, agent: Optional[AgentConfig] = None,
                 experiment: Optional[dict] = None) -> None:
    cp = _parser()
    cp[META_SECTION] = {"schema_version": str(SCHEMA_VERSION)}
    for name, obj in (("sim", sim), ("agent", agent)):
        if obj is not None:
            cp[name] = {k: format_value(v) for k, v in dataclasses.asdict(obj).items()}
    if experiment:
        cp["experiment"] = {k: format_value(v) for k, v in experiment.items()}
    with Path(path).open("w") as fh:
        cp.write(fh)
