"""INI-style configuration files for training and forecasting.

Example::

    [train]
    n_steps = 8
    epochs = 40
    learning_rate = 0.01

    [forecast]
    members = 20
    perturbation = 0.1
"""
from __future__ import annotations

import configparser
import dataclasses
import typing

from .evaluation import ForecastConfig
from .training import TrainConfig

SECTIONS = {"train": TrainConfig, "forecast": ForecastConfig}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, hint, key: str):
    raw = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if raw.lower() in ("", "none"):
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        return hint(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(hint, '__name__', hint)}") from None


def read_config(path) -> dict[str, dict]:
    """Field overrides per section, typed after the config dataclasses."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    out = {}
    for section, cls in SECTIONS.items():
        hints = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        values = {}
        if cp.has_section(section):
            for key, raw in cp.items(section):
                if key not in names:
                    raise ConfigError(f"[{section}] has no field {key!r}")
                values[key] = _coerce(raw, hints[key], f"[{section}] {key}")
        out[section] = values
    return out


def build(cls, file_values: dict, overrides: dict):
    """Dataclass from defaults, then file values, then non-None overrides."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)
