"""INI configuration shared by all subcommands.

Sections mirror the dataclasses they populate::

    [model]       ModelConfig fields (residual_channels as "32, 64")
    [loss]        LossWeights fields
    [schedule]    TrainSchedule fields
    [run]         seed, deterministic, workers

Unknown sections or keys are rejected so typos do not pass silently.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .model import ModelConfig
from .training import LossWeights, TrainSchedule


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    workers: int = 1


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}


_SECTIONS = {"model": ModelConfig, "loss": LossWeights, "schedule": TrainSchedule, "run": RunConfig}


class ConfigError(ValueError):
    pass


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, (list, tuple)):
        return [int(v) for v in raw.replace(",", " ").split()]
    return raw.strip()


def _build(cls, values: dict):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{cls.__name__}] {exc}") from exc


def load_config(path=None, overrides: dict[str, dict] | None = None) -> Config:
    """Read an INI file (optional) and apply per-section overrides on top."""
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for name in parser.sections():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            defaults = _SECTIONS[name]()
            for key, raw in parser[name].items():
                if not hasattr(defaults, key):
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                try:
                    sections[name][key] = _convert(raw, getattr(defaults, key))
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from exc
    for name, values in (overrides or {}).items():
        sections[name].update({k: v for k, v in values.items() if v is not None})
    return Config(**{name: _build(cls, sections[name]) for name, cls in _SECTIONS.items()})


def write_config(cfg: Config, path) -> None:
    parser = configparser.ConfigParser()
    for name, values in cfg.to_dict().items():
        parser[name] = {k: ", ".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
                        for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)
