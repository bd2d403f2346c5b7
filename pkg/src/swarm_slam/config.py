"""Scenario configuration: nested dataclasses loaded from YAML.

Every block maps one-to-one onto a module's parameter dataclass.  Unknown
keys and ill-typed values are rejected with the dotted path of the field,
and :func:`config_to_dict` produces a plain structure that re-parses to an
identical config.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exploration import ExploreParams
from .icp import IcpConfig
from .pose_graph import InfoMatrix3, PgoConfig
from .protocol import ProtocolConfig
from .sim_world import NoiseModel


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class SlamConfig:
    node_interval: float = 0.1  # s between graph poses
    node_travel: float = 0.05  # m travelled that forces a new pose
    pair_distance: float = 1.0  # scan poses closer than this are matched
    scan_min_travel: float = 1.0  # m travelled since the last scan before a spin starts another
    max_correction_xy: float = 1.0  # ICP may move a scan at most this far from the guess
    max_correction_psi: float = 0.5
    map_every: int = 2  # keep every k-th depth frame for the map

    def __post_init__(self):
        if min(self.node_interval, self.node_travel, self.pair_distance, self.max_correction_xy,
               self.max_correction_psi) <= 0 or self.scan_min_travel < 0:
            raise ValueError("SLAM intervals, distances and gates must be positive")
        if self.map_every < 1:
            raise ValueError("map_every must be at least 1")


@dataclass
class EvalConfig:
    density_radius: float = 0.10
    density_min_neighbors: int = 5
    coverage_cell: float = 0.25

    def __post_init__(self):
        if self.density_radius <= 0 or self.coverage_cell <= 0 or self.density_min_neighbors < 0:
            raise ValueError("radius and cell must be positive, min_neighbors non-negative")


# corner take-offs facing the nearest wall, so the first spin (and scan)
# happens right at the take-off pose
MAZE2_TAKEOFF = ((0.75, 0.75, math.pi), (4.25, 4.25, 0.0), (0.75, 4.25, math.pi / 2),
                 (4.25, 0.75, -math.pi / 2))


@dataclass
class ScenarioConfig:
    world: str = "maze2"  # builtin fixture name or path to a segment file
    n_drones: int = 3
    seed: int = 0
    seeds: list = field(default_factory=list)  # batch runs; empty means just ``seed``
    drone_seeds: list = field(default_factory=list)  # per-drone overrides of the stream seed
    duration: float = 90.0
    dt: float = 0.05
    takeoff: list = field(default_factory=lambda: [list(p) for p in MAZE2_TAKEOFF[:3]])
    mode: str = "2d"
    altitude: float = 0.5
    on_collision: str = "continue"
    stop_at_full_coverage: bool = False
    out_dir: str = "out"
    pgo: PgoConfig = field(default_factory=PgoConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    explore: ExploreParams = field(default_factory=ExploreParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    slam: SlamConfig = field(default_factory=SlamConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.n_drones < 1:
            raise ValueError("n_drones must be at least 1")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        if self.mode not in ("2d", "3d"):
            raise ValueError("mode must be '2d' or '3d'")
        if self.on_collision not in ("continue", "abort"):
            raise ValueError("on_collision must be 'continue' or 'abort'")
        if len(self.takeoff) < self.n_drones:
            raise ValueError(f"takeoff lists {len(self.takeoff)} poses for {self.n_drones} drones")
        if any(len(p) != 3 for p in self.takeoff):
            raise ValueError("every takeoff pose is [x, y, psi]")
        if self.drone_seeds and len(self.drone_seeds) != self.n_drones:
            raise ValueError("drone_seeds needs one entry per drone")
        if self.protocol.n_drones != self.n_drones:
            self.protocol = dataclasses.replace(self.protocol, n_drones=self.n_drones)

    def drone_seed(self, drone: int) -> int:
        return int(self.drone_seeds[drone]) if self.drone_seeds else int(self.seed)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=int(seed), seeds=[])


# --------------------------------------------------------------------------
# dict <-> dataclass


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if tp is InfoMatrix3:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list of 3 weights")
        try:
            return InfoMatrix3(tuple(value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp in (list, tuple) or origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value) if (tp is tuple or origin is tuple) else list(value)
    return value


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError(f"{where}: unknown field")
        kwargs[key] = _coerce(value, hints[key], where)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def config_from_dict(data: dict | None) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {})


def _plain(value):
    if isinstance(value, InfoMatrix3):
        return list(value.diag)
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config file {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config file {path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
