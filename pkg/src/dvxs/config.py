"""Plain-text configuration files and override resolution.

Files hold `section.key = value` lines (sections: train, world, behavior,
curiosity). Resolution order: full-scale defaults, then file values, then the
preset overlay, then explicit flag overrides.
"""

from __future__ import annotations

import dataclasses

from .behavior import BehaviorConfig
from .curiosity import CuriosityConfig
from .trainer import (
    PRESET_OVERRIDES,
    TrainConfig,
    apply_config_overrides,
    paper_preset,
)
from .world_model import WorldModelConfig


class ConfigError(ValueError):
    pass


_FIELD_TYPES: dict[str, type] = {}
for section, cls in (("train", TrainConfig), ("world", WorldModelConfig),
                     ("behavior", BehaviorConfig), ("curiosity", CuriosityConfig)):
    for f in dataclasses.fields(cls):
        if f.name in ("world", "behavior", "curiosity"):
            continue
        _FIELD_TYPES[f"{section}.{f.name}"] = f.type


def coerce_value(dotted: str, raw: str):
    """Parse a raw string according to the field's declared type."""
    if dotted not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {dotted!r}")
    ftype = str(_FIELD_TYPES[dotted])
    try:
        if "bool" in ftype:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if "tuple" in ftype:
            return tuple(int(p) for p in raw.replace(",", " ").split())
        if "int" in ftype:
            return int(raw)
        if "float" in ftype:
            return float(raw)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"config key {dotted!r}: {e}") from e


def parse_config_file(path) -> dict:
    """Read `section.key = value` lines into typed overrides."""
    overrides = {}
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'section.key = value'")
            dotted, _, value = line.partition("=")
            dotted = dotted.strip()
            overrides[dotted] = coerce_value(dotted, value.strip())
    return overrides


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults < config file < preset overlay < explicit overrides."""
    cfg = paper_preset()
    if path is not None:
        try:
            apply_config_overrides(cfg, parse_config_file(path))
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if preset is not None:
        if preset not in PRESET_OVERRIDES:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESET_OVERRIDES)}")
        apply_config_overrides(cfg, PRESET_OVERRIDES[preset])
    if overrides:
        typed = {}
        for dotted, value in overrides.items():
            typed[dotted] = coerce_value(dotted, value) if isinstance(value, str) else value
        try:
            apply_config_overrides(cfg, typed)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg
