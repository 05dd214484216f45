"""Scenario configuration: TOML in, validated dataclasses out.

Every key has a default, so an empty file is a valid scenario.  Validation
errors carry the dotted path of the offending field, e.g. ``grey.rho``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidTopology, ParseError

PROTOCOLS = ("mfct", "ergid", "eecrp", "mfct_random")


@dataclass
class FieldConfig:
    width: float = 200.0
    height: float = 200.0
    node_count: int = 100
    initial_energy: float = 0.5
    # 0 keeps every node static
    max_speed: float = 0.0


@dataclass
class FogConfig:
    count: int = 4
    placement: str = "grid"
    # explicit mode: [{x=, y=, region=[x0, y0, x1, y1]}, ...]
    positions: list = field(default_factory=list)
    branching: int = 2
    merge_mode: str = "fixed"
    aggregate_bits: int = 4000
    cloud: list = field(default_factory=lambda: [100.0, 100.0])


@dataclass
class RadioConfig:
    e_elec: float = 50e-9
    eps_fs: float = 10e-12
    eps_mp: float = 0.0013e-12
    e_da: float = 5e-9
    tx_power_dbm: float = 0.0
    pl_ref_db: float = 40.0
    pl_exponent: float = 2.7
    noise_floor_dbm: float = -90.0
    shadowing_db: float = 0.0


@dataclass
class DelayConfig:
    bandwidth: float = 250_000.0
    propagation_speed: float = 3e8
    fog_service: float = 0.005
    cloud_service: float = 0.02


@dataclass
class ProtocolConfig:
    p_hit: float = 0.3
    rate: int = 1
    # joules; unset means 10% of the initial node energy
    energy_threshold: Optional[float] = None
    p_ch: float = 0.1
    comm_radius: float = 50.0
    # unset means comm_radius
    cluster_radius: Optional[float] = None
    epoch_len: int = 1
    packet_bits: int = 4000
    response_bits: int = 4000
    ergid_band: float = 0.1


@dataclass
class GreyConfig:
    rho: float = 0.5
    weights: list = field(default_factory=lambda: [0.2, 0.2, 0.2, 0.2, 0.2])


@dataclass
class FaultConfig:
    # [{round=, nodes=[...]}]: nodes drained right after that round's election
    kill: list = field(default_factory=list)


@dataclass
class ScenarioConfig:
    protocol: str = "mfct"
    rounds: int = 2000
    seed: int = 1
    round_period: float = 1.0
    rate_scenarios: list = field(default_factory=lambda: [1, 2, 4, 8])
    protocols: list = field(default_factory=lambda: ["mfct", "ergid", "eecrp"])
    seeds: list = field(default_factory=lambda: list(range(1, 21)))
    output_dir: str = "out"
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    fog: FogConfig = dataclasses.field(default_factory=FogConfig)
    radio: RadioConfig = dataclasses.field(default_factory=RadioConfig)
    delay: DelayConfig = dataclasses.field(default_factory=DelayConfig)
    protocol_params: ProtocolConfig = dataclasses.field(default_factory=ProtocolConfig)
    grey: GreyConfig = dataclasses.field(default_factory=GreyConfig)
    faults: FaultConfig = dataclasses.field(default_factory=FaultConfig)

    # -- derived values -------------------------------------------------
    @property
    def energy_threshold(self) -> float:
        t = self.protocol_params.energy_threshold
        return 0.1 * self.field.initial_energy if t is None else t

    @property
    def cluster_radius(self) -> float:
        r = self.protocol_params.cluster_radius
        return self.protocol_params.comm_radius if r is None else r

    @property
    def duration(self) -> float:
        return self.rounds * self.round_period

    def replace(self, changes: dict) -> "ScenarioConfig":
        """Copy with keys like ``"rounds"`` or ``"protocol_params.p_hit"`` replaced."""
        data = to_dict(self)
        for key, value in changes.items():
            parts = key.split(".")
            target = data
            for p in parts[:-1]:
                target = target.setdefault(p, {})
            target[parts[-1]] = value
        return from_dict(data)


_SECTIONS = {
    "field": FieldConfig,
    "fog": FogConfig,
    "radio": RadioConfig,
    "delay": DelayConfig,
    "protocol_params": ProtocolConfig,
    "grey": GreyConfig,
    "faults": FaultConfig,
}


def to_dict(cfg: ScenarioConfig) -> dict:
    """Plain nested dict; ``None`` values are dropped (TOML has no null)."""

    def clean(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            if dataclasses.is_dataclass(v):
                v = clean(v)
            out[f.name] = v
        return out

    return clean(cfg)


def to_toml(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def canonical_json(cfg: ScenarioConfig, exclude=("output_dir",)) -> str:
    data = {k: v for k, v in to_dict(cfg).items() if k not in exclude}
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def _coerce(path: str, value: Any, default: Any):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    return value


def _fill(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected a table")
    proto = cls()
    kwargs = {}
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        attr = key
        if attr not in known:
            raise ConfigError(f"{prefix}{key}", "unknown key")
        path = f"{prefix}{attr}"
        if cls is ScenarioConfig and attr in _SECTIONS:
            kwargs[attr] = _fill(_SECTIONS[attr], value, path + ".")
            continue
        default = getattr(proto, attr)
        if default is None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(path, f"expected a number, got {value!r}")
            kwargs[attr] = float(value)
        else:
            kwargs[attr] = _coerce(path, value, default)
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _fill(ScenarioConfig, data, "")
    validate(cfg)
    return cfg


def loads(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from None
    return from_dict(data)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return loads(text)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and math.isfinite(v)


def validate(cfg: ScenarioConfig) -> None:
    _require(cfg.protocol in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
    _require(cfg.rounds >= 0, "rounds", "must be >= 0")
    _require(0 <= cfg.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
    _require(_finite(cfg.round_period) and cfg.round_period > 0, "round_period", "must be positive")
    _require(all(isinstance(r, int) and not isinstance(r, bool) and r > 0 for r in cfg.rate_scenarios),
             "rate_scenarios", "entries must be positive integers")
    _require(all(p in PROTOCOLS for p in cfg.protocols), "protocols", f"entries must be in {PROTOCOLS}")
    _require(all(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64 for s in cfg.seeds),
             "seeds", "entries must be unsigned 64-bit integers")

    f = cfg.field
    _require(_finite(f.width) and f.width > 0, "field.width", "must be positive")
    _require(_finite(f.height) and f.height > 0, "field.height", "must be positive")
    _require(f.node_count >= 1, "field.node_count", "must be >= 1")
    _require(_finite(f.initial_energy) and f.initial_energy > 0, "field.initial_energy", "must be positive")
    _require(_finite(f.max_speed) and f.max_speed >= 0, "field.max_speed", "must be >= 0")

    fg = cfg.fog
    _require(fg.placement in ("grid", "explicit"), "fog.placement", "must be 'grid' or 'explicit'")
    _require(fg.branching >= 2, "fog.branching", "must be >= 2")
    _require(fg.merge_mode in ("fixed", "concat"), "fog.merge_mode", "must be 'fixed' or 'concat'")
    _require(fg.aggregate_bits > 0, "fog.aggregate_bits", "must be positive")
    _require(len(fg.cloud) == 2 and all(_finite(v) for v in fg.cloud), "fog.cloud", "must be [x, y]")
    if fg.placement == "grid":
        _require(fg.count >= 1, "fog.count", "must be >= 1")
    else:
        _require(len(fg.positions) >= 1, "fog.positions", "explicit placement needs at least one fog")
        for i, entry in enumerate(fg.positions):
            p = f"fog.positions[{i}]"
            _require(isinstance(entry, dict) and {"x", "y", "region"} <= set(entry), p,
                     "needs x, y and region = [x0, y0, x1, y1]")
            _require(_finite(entry["x"]) and _finite(entry["y"]), p, "x and y must be finite")
            _require(isinstance(entry["region"], list) and len(entry["region"]) == 4
                     and all(_finite(v) for v in entry["region"]), p + ".region", "must be [x0, y0, x1, y1]")
        from .network import Rect, check_tiling
        try:
            check_tiling([Rect(*e["region"]) for e in fg.positions], f.width, f.height)
        except InvalidTopology as exc:
            raise ConfigError("fog.positions", str(exc)) from None

    r = cfg.radio
    for name in ("e_elec", "eps_fs", "eps_mp", "e_da"):
        v = getattr(r, name)
        _require(_finite(v) and v > 0, f"radio.{name}", "must be positive")
    _require(_finite(r.pl_exponent) and r.pl_exponent >= 2, "radio.pl_exponent", "must be >= 2")
    for name in ("tx_power_dbm", "pl_ref_db", "noise_floor_dbm"):
        _require(_finite(getattr(r, name)), f"radio.{name}", "must be finite")
    _require(_finite(r.shadowing_db) and r.shadowing_db >= 0, "radio.shadowing_db", "must be >= 0")

    d = cfg.delay
    for name in ("bandwidth", "propagation_speed", "fog_service", "cloud_service"):
        v = getattr(d, name)
        _require(_finite(v) and v > 0, f"delay.{name}", "must be positive")

    pc = cfg.protocol_params
    _require(_finite(pc.p_hit) and 0 <= pc.p_hit <= 1, "protocol_params.p_hit", "must lie in [0, 1]")
    _require(pc.rate > 0, "protocol_params.rate", "must be positive")
    if pc.energy_threshold is not None:
        _require(_finite(pc.energy_threshold) and pc.energy_threshold >= 0,
                 "protocol_params.energy_threshold", "must be >= 0")
    _require(_finite(pc.p_ch) and 0 < pc.p_ch <= 1, "protocol_params.p_ch", "must lie in (0, 1]")
    _require(_finite(pc.comm_radius) and pc.comm_radius > 0, "protocol_params.comm_radius", "must be positive")
    if pc.cluster_radius is not None:
        _require(_finite(pc.cluster_radius) and pc.cluster_radius > 0, "protocol_params.cluster_radius", "must be positive")
    _require(pc.epoch_len >= 1, "protocol_params.epoch_len", "must be >= 1")
    _require(pc.packet_bits > 0, "protocol_params.packet_bits", "must be positive")
    _require(pc.response_bits > 0, "protocol_params.response_bits", "must be positive")
    _require(_finite(pc.ergid_band) and pc.ergid_band >= 0, "protocol_params.ergid_band", "must be >= 0")

    g = cfg.grey
    _require(_finite(g.rho) and 0 < g.rho <= 1, "grey.rho", "must lie in (0, 1]")
    _require(len(g.weights) == 5 and all(_finite(w) and w >= 0 for w in g.weights),
             "grey.weights", "needs five nonnegative weights (e_re, hc, d, let, snr)")
    _require(abs(math.fsum(g.weights) - 1.0) <= 1e-9, "grey.weights", "must sum to 1")

    for i, entry in enumerate(cfg.faults.kill):
        p = f"faults.kill[{i}]"
        _require(isinstance(entry, dict) and isinstance(entry.get("round"), int)
                 and isinstance(entry.get("nodes"), list), p, "needs round = <int> and nodes = [ids]")
        _require(all(isinstance(n, int) and 0 <= n < f.node_count for n in entry["nodes"]),
                 p + ".nodes", "ids must name deployed nodes")
