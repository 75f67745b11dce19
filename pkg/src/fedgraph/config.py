"""Experiment configuration: strict YAML <-> dataclass conversion and sweeps."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .aggregation import AggregationConfig
from .data import FORMATS
from .federation import RunConfig, with_overrides
from .lightgcn import LocalHyperParams

SWEEP_AXES = ("clients_per_round", "alpha_mode", "user_strategy", "item_strategy", "seed")
_AXIS_TARGET = {
    "clients_per_round": "clients_per_round",
    "seed": "seed",
    "alpha_mode": "aggregation.alpha_mode",
    "user_strategy": "aggregation.user_strategy",
    "item_strategy": "aggregation.item_strategy",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class DatasetConfig:
    path: str = "data/ml-100k/u.data"
    format: str = "movielens-tab"


@dataclass
class PreprocessConfig:
    rating_threshold: float = 3.0
    min_interactions: int = 15
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    seed: int = 42


@dataclass
class SweepConfig:
    clients_per_round: Optional[list] = None
    alpha_mode: Optional[list] = None
    user_strategy: Optional[list] = None
    item_strategy: Optional[list] = None
    seed: Optional[list] = None

    def axes(self) -> list[tuple[str, list]]:
        return [(name, getattr(self, name)) for name in SWEEP_AXES if getattr(self, name) is not None]


@dataclass
class ExperimentSpec:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    preprocessing: PreprocessConfig = field(default_factory=PreprocessConfig)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> None:
        if self.dataset.format not in FORMATS:
            raise ConfigError(f"dataset.format: expected one of {FORMATS}, got {self.dataset.format!r}")
        pp = self.preprocessing
        if len(pp.split) != 3 or any(f <= 0 for f in pp.split) or abs(sum(pp.split) - 1) > 1e-9:
            raise ConfigError("preprocessing.split: need three positive fractions summing to 1")
        if pp.min_interactions < 1:
            raise ConfigError("preprocessing.min_interactions: must be >= 1")
        try:
            self.run.validate()
        except ValueError as exc:
            raise ConfigError(f"run.{exc}") from None
        for name, values in self.sweep.axes():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{name}: must be a nonempty list")
        for cell in self.cells():
            try:
                cell.validate()
            except ValueError as exc:
                raise ConfigError(f"sweep cell: run.{exc}") from None

    def cells(self) -> list[RunConfig]:
        """One RunConfig per point of the sweep grid (the base run if no axes)."""
        axes = self.sweep.axes()
        if not axes:
            return [self.run]
        names = [n for n, _ in axes]
        out = []
        for values in itertools.product(*(v for _, v in axes)):
            changes = {_AXIS_TARGET[n]: v for n, v in zip(names, values)}
            out.append(with_overrides(self.run, **changes))
        return out


def _hint_for(cls, name):
    return typing.get_type_hints(cls)[name]


def _coerce(value, hint, where):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if dataclasses.is_dataclass(hint):
        return from_dict(hint, value, where)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def from_dict(cls, data: Any, where: str = ""):
    """Build dataclass ``cls`` from a mapping; unknown keys are errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{where + '.' if where else ''}{key}: unknown key")
    kwargs = {}
    for name, value in data.items():
        path = f"{where}.{name}" if where else name
        kwargs[name] = _coerce(value, _hint_for(cls, name), path)
    return cls(**kwargs)


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    spec = from_dict(ExperimentSpec, data)
    spec.validate()
    return spec


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(to_dict(spec), sort_keys=False)


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


__all__ = [
    "AggregationConfig", "ConfigError", "DatasetConfig", "ExperimentSpec", "LocalHyperParams",
    "PreprocessConfig", "RunConfig", "SweepConfig", "config_hash", "dump_spec", "from_dict",
    "load_spec", "to_dict",
]
