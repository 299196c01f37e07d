"""Scenario files: schema, defaults, validation and topology generation.

Scenarios are YAML documents. Durations carry their unit in the key name
(``_s``, ``_ms`` or ``_us``); inside the simulator every time is an integer
number of microseconds.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .controllers import ControllerPlacement
from .kernel import MS, SEC, RngStream
from .mac import MacConfig, RdcConfig
from .medium import MediumConfig, pairwise_distances
from .rpl import RplConfig
from .usdn import UsdnConfig
from .wise import WiseConfig

SEED_ENV = "SDNMESH_BASE_SEED"
TOPOLOGY_STREAM = 1_000_010
MAX_PLACEMENT_ATTEMPTS = 1000

_UNITS = {"s": SEC, "ms": MS, "us": 1}


class ScenarioError(ValueError):
    """Raised with every violated field when a scenario does not validate."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class TopologyConfig:
    kind: str = "grid"
    n: int = 50
    spacing: float = 20.0
    area: float = 300.0
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in ("grid", "random"):
            errors.append("topology.kind must be 'grid' or 'random'")
        if self.n < 2:
            errors.append("topology.n must be >= 2")
        if self.kind == "grid" and not self.spacing > 0:
            errors.append("topology.spacing must be > 0")
        if self.kind == "random" and not self.area > 0:
            errors.append("topology.area must be > 0")
        return errors


@dataclass
class TrafficModel:
    """Upward application data plus an optional stream of one-shot flow requests."""

    bit_rate: float = 9.0
    payload_bytes: int = 32
    flow_request_rate: float = 0.0
    sources: object = None
    hop_distance: int | None = None
    destination: str = "sink"
    inter_arrival: str = "deterministic"
    start: int = 60 * SEC
    flow_start: int | None = None

    def validate(self) -> list[str]:
        errors = []
        if self.bit_rate < 0:
            errors.append("traffic.bit_rate must be >= 0")
        if self.flow_request_rate < 0:
            errors.append("traffic.flow_request_rate must be >= 0")
        if self.payload_bytes < 1:
            errors.append("traffic.payload_bytes must be >= 1")
        if self.inter_arrival not in ("deterministic", "exponential"):
            errors.append("traffic.inter_arrival must be 'deterministic' or 'exponential'")
        if self.destination != "sink":
            errors.append("traffic.destination must be 'sink'")
        if self.start < 0:
            errors.append("traffic.start must be >= 0")
        if self.hop_distance is not None and self.hop_distance < 1:
            errors.append("traffic.hop_distance must be >= 1")
        src = self.sources
        if src is not None and not isinstance(src, (int, list)):
            errors.append("traffic.sources must be a count or a list of node ids")
        if isinstance(src, int) and src < 1:
            errors.append("traffic.sources must be >= 1")
        return errors

    @property
    def packet_interval(self) -> int | None:
        if self.bit_rate <= 0:
            return None
        return int(round(self.payload_bytes * 8 * SEC / self.bit_rate))


@dataclass
class FaultSpec:
    time: int = 120 * SEC
    links: int = 1

    def validate(self) -> list[str]:
        errors = []
        if self.time < 0:
            errors.append("faults.time must be >= 0")
        if self.links < 0:
            errors.append("faults.links must be >= 0")
        return errors


@dataclass
class EnergyConfig:
    tx_current: float = 17.4
    rx_current: float = 18.8
    listen_current: float = 18.8
    voltage: float = 3.0
    battery_mJ: float = 2500.0 * 3.6 * 3.0 * 1000.0

    def ledger_kwargs(self) -> dict:
        return dict(tx_current=self.tx_current, rx_current=self.rx_current,
                    listen_current=self.listen_current, voltage=self.voltage)

    def validate(self) -> list[str]:
        errors = []
        for name in ("tx_current", "rx_current", "listen_current", "voltage"):
            if getattr(self, name) < 0:
                errors.append(f"energy.{name} must be >= 0")
        return errors


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    stack: str = "usdn"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    placement: ControllerPlacement = field(default_factory=ControllerPlacement.embedded)
    duration: int = 300 * SEC
    warmup: int = 0
    traffic: TrafficModel = field(default_factory=TrafficModel)
    faults: list = field(default_factory=list)
    repetitions: int = 50
    base_seed: int = 1
    routing_weight: str | None = None
    medium: MediumConfig = field(default_factory=MediumConfig)
    mac: MacConfig = field(default_factory=MacConfig)
    rdc: RdcConfig = field(default_factory=RdcConfig)
    rpl: RplConfig = field(default_factory=RplConfig)
    usdn: UsdnConfig = field(default_factory=UsdnConfig)
    wise: WiseConfig = field(default_factory=WiseConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def validate(self) -> list[str]:
        errors = []
        if self.stack not in ("usdn", "sdnwise"):
            errors.append("stack must be 'usdn' or 'sdnwise'")
        if self.duration <= 0:
            errors.append("duration must be > 0")
        if not 0 <= self.warmup < max(self.duration, 1):
            errors.append("warmup must be >= 0 and below duration")
        if self.repetitions < 1:
            errors.append("repetitions must be >= 1")
        if self.routing_weight not in (None, "hop", "quality"):
            errors.append("routing_weight must be 'hop' or 'quality'")
        for section in ("topology", "placement", "traffic", "medium", "mac", "rdc", "rpl",
                        "usdn", "wise", "energy"):
            errors.extend(getattr(self, section).validate())
        for f in self.faults:
            errors.extend(f.validate())
        return errors

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(copy.deepcopy(self), **changes)

    def digest(self) -> str:
        text = dump_text(self)
        return hashlib.blake2b(text.encode(), digest_size=16).hexdigest()


_SECTIONS = {
    "topology": TopologyConfig, "placement": ControllerPlacement, "traffic": TrafficModel,
    "medium": MediumConfig, "mac": MacConfig, "rdc": RdcConfig, "rpl": RplConfig,
    "usdn": UsdnConfig, "wise": WiseConfig, "energy": EnergyConfig,
}

# time-valued fields and the unit used for them in the file
_TIME_FIELDS = {
    ScenarioConfig: {"duration": "s", "warmup": "s"},
    ControllerPlacement: {"backhaul_delay": "ms", "service_time": "ms"},
    TrafficModel: {"start": "s", "flow_start": "s"},
    FaultSpec: {"time": "s"},
    MacConfig: {"backoff_unit": "us"},
    RdcConfig: {"listen_window": "us"},
    RplConfig: {"route_lifetime": "s", "trickle_imin": "s", "trickle_imax": "s",
                "dis_interval": "s", "dao_refresh": "s"},
    UsdnConfig: {"nsu_period": "s", "flow_lifetime": "s", "sweep_interval": "s", "ftq_timeout": "s", "join_retry": "s"},
    WiseConfig: {"beacon_period": "s", "report_period": "s", "entry_ttl": "s", "request_timeout": "s", "join_retry": "s"},
}


def _to_ticks(value, unit: str) -> int:
    return int(round(float(value) * _UNITS[unit]))


def _from_ticks(ticks: int, unit: str):
    v = ticks / _UNITS[unit]
    return int(v) if float(v).is_integer() else v


def _build(cls, data, where: str, errors: list[str]):
    obj = cls()
    if data is None:
        return obj
    if not isinstance(data, dict):
        errors.append(f"{where} must be a mapping")
        return obj
    units = _TIME_FIELDS.get(cls, {})
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        name, unit = key, None
        for fname, u in units.items():
            if key == f"{fname}_{u}":
                name, unit = fname, u
        if name in units and unit is None:
            errors.append(f"{where}.{key}: give the unit in the key, e.g. {key}_{units[name]}")
            continue
        if name not in names or name in _SECTIONS or name == "faults":
            errors.append(f"{where}.{key}: unknown field")
            continue
        try:
            if unit is not None:
                value = None if value is None else _to_ticks(value, unit)
            setattr(obj, name, _coerce(cls, name, value))
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}.{key}: {exc}")
    return obj


def _coerce(cls, name: str, value):
    default = getattr(cls(), name)
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError("expected true or false")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a scenario; raises :class:`ScenarioError` listing every problem."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ScenarioError(["scenario must be a mapping"])
    top = {k: v for k, v in data.items() if k not in _SECTIONS and k != "faults"}
    cfg = _build(ScenarioConfig, top, "scenario", errors)
    for section, cls in _SECTIONS.items():
        if section in data:
            setattr(cfg, section, _build(cls, data[section], section, errors))
    if cfg.placement.kind == "external" and "placement" in data:
        given = data["placement"] or {}
        base = ControllerPlacement.external()
        for fname in ("service_time", "backhaul_delay"):
            if f"{fname}_ms" not in given:
                setattr(cfg.placement, fname, getattr(base, fname))
    faults = data.get("faults") or []
    if not isinstance(faults, list):
        errors.append("faults must be a list")
        faults = []
    cfg.faults = [_build(FaultSpec, f, f"faults[{i}]", errors) for i, f in enumerate(faults)]
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg.base_seed = int(env)
        except ValueError:
            errors.append(f"{SEED_ENV} must be an integer, got {env!r}")
    errors.extend(cfg.validate())
    if errors:
        raise ScenarioError(errors)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError([f"{path}: cannot parse: {exc}"]) from exc
    return from_dict(data or {})


def _plain(obj) -> dict:
    units = _TIME_FIELDS.get(type(obj), {})
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if f.name in _SECTIONS:
            out[f.name] = _plain(value)
        elif f.name == "faults":
            out[f.name] = [_plain(x) for x in value]
        elif f.name in units:
            u = units[f.name]
            out[f"{f.name}_{u}"] = None if value is None else _from_ticks(value, u)
        else:
            out[f.name] = value
    return out


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def dump_text(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def dump_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_text(cfg))


def grid_positions(n: int, spacing: float) -> np.ndarray:
    """Row-major lattice, ceil(sqrt(n)) columns, node 0 (the sink) at the origin."""
    cols = math.ceil(math.sqrt(n))
    idx = np.arange(n)
    return np.column_stack([(idx % cols) * spacing, (idx // cols) * spacing]).astype(float)


def connected(positions: np.ndarray, tx_range: float) -> bool:
    d = pairwise_distances(positions)
    adj = d <= tx_range
    seen = np.zeros(len(positions), dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = np.nonzero(adj[frontier].any(axis=0) & ~seen)[0]
        seen[nxt] = True
        frontier = list(nxt)
    return bool(seen.all())


def generate_topology(cfg: ScenarioConfig) -> np.ndarray:
    topo = cfg.topology
    if topo.kind == "grid":
        return grid_positions(topo.n, topo.spacing)
    rng = RngStream(topo.seed, TOPOLOGY_STREAM)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        pos = np.array([[rng.uniform(0, topo.area), rng.uniform(0, topo.area)] for _ in range(topo.n)])
        if connected(pos, cfg.medium.tx_range):
            return pos
    raise ScenarioError([f"random topology with n={topo.n} in {topo.area} m square not connected "
                         f"after {MAX_PLACEMENT_ATTEMPTS} attempts"])
