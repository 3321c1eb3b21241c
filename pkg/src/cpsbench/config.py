"""Scenario configuration: the benchmark design variables plus parameter overrides.

Configurations are JSON documents. Every section is optional except the
design variables ``task``, ``agent_count``, ``controller_location`` and
``network.round_period``; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .control import DEFAULT_Q, DEFAULT_R
from .exceptions import ConfigError, InvalidArgumentError
from .network import Bernoulli, GilbertElliott
from .plant import PlantParams, SensorConfig

TASKS = ("stabilization", "synchronization", "stabilization+synchronization")
LOCATIONS = ("local", "remote")

_DEFAULT_Q = tuple(tuple(float(v) for v in row) for row in DEFAULT_Q)


@dataclass(frozen=True)
class LossConfig:
    model: str = "bernoulli"
    p: float = 0.0
    p_good_to_bad: float = 0.0
    p_bad_to_good: float = 1.0
    loss_good: float = 0.0
    loss_bad: float = 1.0

    def build(self):
        if self.model == "bernoulli":
            return Bernoulli(self.p)
        if self.model == "gilbert_elliott":
            return GilbertElliott(self.p_good_to_bad, self.p_bad_to_good, self.loss_good, self.loss_bad)
        raise ConfigError(f"network.loss.model: unknown loss model {self.model!r}")


@dataclass(frozen=True)
class NetworkConfig:
    round_period: float = 0.04
    node_count: int = 9
    hops: int = 3
    bitrate: float = 250_000.0
    per_slot_overhead: float = 0.001
    state_bytes: int = 16
    input_bytes: int = 4
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass(frozen=True)
class ControllerConfig:
    Q: Tuple[Tuple[float, ...], ...] = _DEFAULT_Q
    R: float = DEFAULT_R
    prediction: bool = True
    sync_method: str = "consensus"
    # None selects a default that depends on the operating point; see sync_gains().
    sync_gain: Optional[float] = None
    sync_damping: Optional[float] = None
    sync_weight: float = 10.0
    sync_graph: Union[str, Tuple[Tuple[int, ...], ...]] = "complete"


@dataclass(frozen=True)
class MetricsConfig:
    transient: float = 2.0
    final_window: float = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    task: str
    agent_count: int
    controller_location: str
    network: NetworkConfig
    controller_count: int = 1
    node_mobility: str = "stationary"
    lookahead: int = 2
    duration: float = 60.0
    physics_dt: float = 0.001
    seed: int = 0
    initial_angle_deg: float = 2.0
    initial_spread: float = 0.1
    blackout_rounds: int = 25
    plant: PlantParams = field(default_factory=PlantParams)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def sync_gains(self) -> Tuple[float, float]:
        """Consensus ``(gain, damping)`` with defaults filled in.

        Around the hanging equilibrium the carts behave like damped masses
        and take a stiff coupling. Around the upright equilibrium the
        coupling adds to the stabilizing gain, whose position term has the
        opposite sign, so only a weak undamped coupling keeps the loop stable.
        """
        ctl = self.controller
        gain, damping = (0.25, 0.0) if self.stabilizes else (2.0, 2.0)
        return (gain if ctl.sync_gain is None else ctl.sync_gain,
                damping if ctl.sync_damping is None else ctl.sync_damping)

    @property
    def stabilizes(self) -> bool:
        return self.task in ("stabilization", "stabilization+synchronization")

    @property
    def synchronizes(self) -> bool:
        return self.task in ("synchronization", "stabilization+synchronization")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=int(seed))


_REQUIRED = ("task", "agent_count", "controller_location", "network")
_SECTIONS = {
    "network": NetworkConfig,
    "plant": PlantParams,
    "sensor": SensorConfig,
    "controller": ControllerConfig,
    "metrics": MetricsConfig,
}


def _number(key, value, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return value


def _coerce(key, value, annotation):
    ann = str(annotation)
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if ann == "int":
        return _number(key, value, integer=True)
    if ann == "float":
        return _number(key, value)
    if ann == "Optional[float]":
        return None if value is None else _number(key, value)
    if ann == "Optional[int]":
        if value is None or value == "infinite":
            return None
        return _number(key, value, integer=True)
    raise ConfigError(f"{key}: unsupported field type {ann}")


def _section(prefix: str, cls, data: Dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}.{key}"
        if key not in fields:
            raise ConfigError(f"{name}: unknown key")
        if cls is NetworkConfig and key == "loss":
            kwargs[key] = _section(name, LossConfig, value)
        elif cls is ControllerConfig and key == "Q":
            kwargs[key] = _weight_matrix(name, value)
        elif cls is ControllerConfig and key == "sync_graph":
            kwargs[key] = _graph(name, value)
        else:
            kwargs[key] = _coerce(name, value, fields[key].type)
    try:
        return cls(**kwargs)
    except InvalidArgumentError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def _weight_matrix(key, value):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{key}: expected a list")
    if all(not isinstance(v, list) for v in value):
        diag = [_number(f"{key}[{i}]", v) for i, v in enumerate(value)]
        n = len(diag)
        return tuple(tuple(diag[i] if i == j else 0.0 for j in range(n)) for i in range(n))
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != len(value):
            raise ConfigError(f"{key}: expected a square matrix")
        rows.append(tuple(_number(f"{key}[{i}][{j}]", v) for j, v in enumerate(row)))
    return tuple(rows)


def _graph(key, value):
    if value == "complete":
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{key}: expected 'complete' or a list of neighbor lists")
    out = []
    for i, nbrs in enumerate(value):
        if not isinstance(nbrs, list):
            raise ConfigError(f"{key}[{i}]: expected a list of agent ids")
        out.append(tuple(_number(f"{key}[{i}]", j, integer=True) for j in nbrs))
    return tuple(out)


def config_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """Validate a parsed document and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(f"{key}: unknown key")
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"{key}: required design variable missing")
    if not isinstance(data["network"], dict):
        raise ConfigError("network: expected an object")
    if "round_period" not in data["network"]:
        raise ConfigError("network.round_period: required design variable missing")

    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _section(key, _SECTIONS[key], value)
        else:
            kwargs[key] = _coerce(key, value, top[key].type)
    cfg = ScenarioConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ScenarioConfig) -> None:
    """Cross-field checks; raises :class:`ConfigError` naming the offending key."""
    if cfg.node_mobility == "mobile":
        raise ConfigError("node_mobility: mobile nodes are out of scope for this simulator")
    if cfg.node_mobility != "stationary":
        raise ConfigError(f"node_mobility: unknown value {cfg.node_mobility!r}")
    if cfg.task not in TASKS:
        raise ConfigError(f"task: expected one of {TASKS}, got {cfg.task!r}")
    if cfg.controller_location not in LOCATIONS:
        raise ConfigError(f"controller_location: expected one of {LOCATIONS}")
    if cfg.agent_count < 1:
        raise ConfigError("agent_count: must be at least 1")
    if cfg.synchronizes and cfg.agent_count < 2:
        raise ConfigError("agent_count: synchronization needs at least two agents")
    if cfg.task == "synchronization" and cfg.controller_location == "local":
        raise ConfigError(
            "controller_location: synchronization exchanges states over the network; use remote"
        )
    if not 1 <= cfg.controller_count <= cfg.agent_count:
        raise ConfigError("controller_count: must lie between 1 and agent_count")
    if cfg.lookahead < 1:
        raise ConfigError("lookahead: must be at least 1")
    if cfg.duration < 0:
        raise ConfigError("duration: must be non-negative")
    if not cfg.physics_dt > 0:
        raise ConfigError("physics_dt: must be positive")
    if cfg.blackout_rounds < 1:
        raise ConfigError("blackout_rounds: must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    net = cfg.network
    if not net.round_period > 0:
        raise ConfigError("network.round_period: must be positive")
    ratio = net.round_period / cfg.physics_dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ConfigError("physics_dt: round_period must be a multiple of physics_dt")
    if net.hops < 1:
        raise ConfigError("network.hops: must be at least 1")
    needed = cfg.agent_count + cfg.controller_count
    if net.node_count < max(2, needed):
        raise ConfigError(f"network.node_count: need at least {needed} nodes")
    if net.state_bytes < 1 or net.input_bytes < 1:
        raise ConfigError("network: payload sizes must be at least one byte")
    try:
        net.loss.build()
    except InvalidArgumentError as exc:
        raise ConfigError(f"network.loss: {exc}") from None
    ctl = cfg.controller
    if ctl.sync_method not in ("consensus", "augmented"):
        raise ConfigError(f"controller.sync_method: unknown method {ctl.sync_method!r}")
    if len(ctl.Q) != 4:
        raise ConfigError("controller.Q: expected a 4x4 weight")
    if not ctl.R > 0:
        raise ConfigError("controller.R: must be positive")
    if ctl.sync_gain is not None and not ctl.sync_gain > 0:
        raise ConfigError("controller.sync_gain: must be positive")
    if ctl.sync_damping is not None and ctl.sync_damping < 0:
        raise ConfigError("controller.sync_damping: must be non-negative")
    if ctl.sync_graph != "complete" and len(ctl.sync_graph) != cfg.agent_count:
        raise ConfigError("controller.sync_graph: need one neighbor list per agent")


def config_to_dict(cfg: ScenarioConfig) -> Dict[str, Any]:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    data = convert(cfg)
    for key in ("angle_resolution", "position_resolution"):
        if data["sensor"][key] is None:
            data["sensor"][key] = "infinite"
    return data


def parse_config(source: Union[str, Path, Dict[str, Any]]) -> ScenarioConfig:
    """Load and validate a configuration from a JSON file path or a dict."""
    if isinstance(source, dict):
        return config_from_dict(source)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return config_from_dict(data)


def write_config(cfg: ScenarioConfig, path: Optional[Union[str, Path]] = None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
