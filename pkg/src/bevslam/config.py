"""Run configuration: one dataclass tree covering every stage.

Configs load from JSON with strict key checking: a misspelled or
unknown key raises immediately with its full dotted path rather than
being silently ignored, which is the failure mode that otherwise eats
an afternoon.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields

from .fusion import FusionConfig, FusionWeights
from .loop import LoopConfig
from .mapping import MappingConfig
from .matching import IcpConfig
from .posegraph import OptimizeConfig
from .sim import SensorNoiseModel, SensorRates, VehicleModel


class ConfigError(Exception):
    """A configuration document is malformed."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a full simulate-run-evaluate cycle needs."""

    seed: int = 0
    template: str = "loop-corridor"
    laps: int = 2
    speed: float = 2.5
    realtime: bool = False
    loop_enabled: bool = True
    spq_enabled: bool = True
    optimizer_enabled: bool = True
    kinematic_edges: bool = True
    submaps_per_episode: int = 2
    map_render_pixels_per_meter: float = 20.0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    optimizer: OptimizeConfig = field(default_factory=OptimizeConfig)
    noise: SensorNoiseModel = field(default_factory=SensorNoiseModel)
    rates: SensorRates = field(default_factory=SensorRates)
    vehicle: VehicleModel = field(default_factory=VehicleModel)

    def __post_init__(self) -> None:
        if self.laps < 1:
            raise ConfigError("laps must be at least 1")
        if self.speed <= 0.0:
            raise ConfigError("speed must be positive")
        if self.submaps_per_episode < 1:
            raise ConfigError("submaps_per_episode must be at least 1")


_NESTED = (
    FusionConfig,
    FusionWeights,
    MappingConfig,
    IcpConfig,
    LoopConfig,
    OptimizeConfig,
    SensorNoiseModel,
    SensorRates,
    VehicleModel,
)


def _coerce(value, annotation, path: str):
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if isinstance(annotation, type) and annotation in _NESTED:
        return _build(annotation, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    if annotation is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + u for u in unknown)}")
    kwargs = {}
    for name, value in data.items():
        child = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(value, hints[name], child)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    """Build a :class:`RunConfig`, rejecting unknown keys at any depth."""
    return _build(RunConfig, data, "")


def config_to_dict(config: RunConfig) -> dict:
    """Plain-JSON-types view of a config (tuples become lists)."""

    def convert(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: convert(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(config)
