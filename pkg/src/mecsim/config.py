"""Experiment configuration: a flat TOML file, overridable by ``key=value`` flags."""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import Catalog, CostParams
from .policy import POLICIES
from .workload import WorkloadParams

SWEEPABLE = (
    "cache_fraction",
    "cache_bytes",
    "processing_mbps",
    "arrival_rate",
    "zipf_alpha",
    "num_servers",
    "requests_per_server",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    policy: tuple = POLICIES
    num_servers: int = 3
    num_videos: int = 1000
    num_levels: int = 4
    base_bitrate_mbps: float = 2.0
    relative_bitrates: tuple = (0.45, 0.55, 0.67, 0.82)
    video_length_s: float = 600.0
    cache_fraction: float = 0.2  # of the whole library (all levels of all videos)
    cache_bytes: int = None  # absolute per-server size; overrides cache_fraction
    processing_mbps: float = 10.0
    tau: float = None  # processing units per byte; default makes units = output b/s
    zipf_alpha: float = 0.8
    arrival_rate: float = 8.0  # requests/minute at every server
    arrival_rates: tuple = None
    requests_per_server: int = 10_000
    seeds: tuple = tuple(range(10))
    sweep_param: str = None
    sweep_values: tuple = ()
    output: str = None
    warmup_requests: int = 0
    jccp_home_transcode: bool = True
    check_invariants: bool = True
    workers: int = None
    record_runtime: bool = False

    def __post_init__(self):
        _validate(self)

    # derived model objects

    def catalog(self) -> Catalog:
        return Catalog.from_relative(
            self.num_videos,
            self.base_bitrate_mbps * 1e6,
            sorted(self.relative_bitrates),
            self.video_length_s,
        )

    def cost_params(self, catalog: Catalog = None) -> CostParams:
        if self.tau is not None:
            return CostParams(self.tau)
        return CostParams.bitrate_equivalent(catalog or self.catalog())

    def workload(self) -> WorkloadParams:
        return WorkloadParams(
            num_videos=self.num_videos,
            num_levels=self.num_levels,
            zipf_alpha=self.zipf_alpha,
            arrival_rate=self.arrival_rate,
            requests_per_server=self.requests_per_server,
            video_length=self.video_length_s,
            arrival_rates=self.arrival_rates,
        )

    def cache_capacity(self, catalog: Catalog = None) -> int:
        if self.cache_bytes is not None:
            return int(self.cache_bytes)
        return int(self.cache_fraction * (catalog or self.catalog()).library_size)

    def processing_capacity(self) -> float:
        """Per-server P_j in processing units (b/s-equivalent by default)."""
        if math.isinf(self.processing_mbps):
            return math.inf
        return self.processing_mbps * 1e6

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def points(self):
        """(sweep value or None, concrete config) in configured order."""
        if self.sweep_param is None:
            yield None, self
            return
        for value in self.sweep_values:
            yield value, self.replace(sweep_param=None, sweep_values=(), **{self.sweep_param: value})


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _validate(c: ExperimentConfig):
    for name in c.policy:
        if name not in POLICIES:
            raise ConfigError(f"unknown policy {name!r}; valid policies: {', '.join(POLICIES)}")
    if not c.policy:
        raise ConfigError("no policy given")
    if c.num_servers < 1:
        raise ConfigError("num_servers must be >= 1")
    if c.num_videos < 1 or c.num_levels < 1:
        raise ConfigError("num_videos and num_levels must be >= 1")
    if len(c.relative_bitrates) != c.num_levels:
        raise ConfigError(
            f"relative_bitrates has {len(c.relative_bitrates)} entries, num_levels is {c.num_levels}"
        )
    if c.sweep_param is None:
        for key in ("cache_fraction", "processing_mbps", "arrival_rate"):
            if not getattr(c, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if c.cache_bytes is not None and not c.cache_bytes > 0:
            raise ConfigError("cache_bytes must be positive")
    else:
        if c.sweep_param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {c.sweep_param!r}; sweepable: {', '.join(SWEEPABLE)}")
        if not c.sweep_values:
            raise ConfigError(f"empty sweep over {c.sweep_param}")
        for v in c.sweep_values:
            if c.sweep_param in ("cache_fraction", "processing_mbps", "arrival_rate") and not v > 0:
                raise ConfigError(f"{c.sweep_param} values must be positive, got {v}")
    if not c.seeds:
        raise ConfigError("need at least one seed")
    if c.requests_per_server < 1:
        raise ConfigError("requests_per_server must be >= 1")
    if c.warmup_requests < 0:
        raise ConfigError("warmup_requests must be >= 0")


def _line_of(text: str, key: str):
    for n, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return n
    return None


def _where(text, key):
    n = _line_of(text, key) if text else None
    return f"line {n}: " if n else ""


def _coerce(key, value, text=None):
    where = _where(text, key)
    if key == "policy":
        value = [value] if isinstance(value, str) else value
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where}policy must be a name or a list of names")
        return tuple(v.lower() for v in value)
    if key == "seeds":
        value = [value] if isinstance(value, int) else value
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{where}seeds must be an integer or a list of integers")
        return tuple(value)
    if key in ("relative_bitrates", "arrival_rates"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}{key} must be a list")
        return tuple(float(v) for v in value)
    default = FIELDS[key].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}{key} must be true or false")
        return value
    if isinstance(default, float) or key in ("tau",):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int) or key in ("cache_bytes", "workers"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}{key} must be an integer, got {value!r}")
        return value
    if key in ("output", "sweep_param"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}{key} must be a string")
        return value
    return value


def from_mapping(data: dict, text: str = None, base: ExperimentConfig = None) -> ExperimentConfig:
    """Resolve a flat mapping onto ``base`` (defaults if None).

    A list given for a sweepable key declares that key as the sweep axis.
    """
    base = base or ExperimentConfig()
    changes = {}
    sweep = {}
    if "sweep_param" in data or "sweep_values" in data:
        raise ConfigError("declare a sweep by giving a list value, e.g. cache_fraction = [0.1, 0.2]")
    for key, value in data.items():
        if key not in FIELDS:
            raise ConfigError(f"{_where(text, key)}unknown key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"{_where(text, key)}tables are not supported; use flat keys")
        if key in SWEEPABLE and isinstance(value, list):
            sweep[key] = tuple(_coerce(key, v, text) for v in value)
            continue
        changes[key] = _coerce(key, value, text)
    if len(sweep) > 1:
        raise ConfigError(f"only one sweep axis allowed, got {', '.join(sweep)}")
    if sweep:
        (key, values), = sweep.items()
        changes["sweep_param"], changes["sweep_values"] = key, values
    elif base.sweep_param in changes:
        changes["sweep_param"], changes["sweep_values"] = None, ()
    return dataclasses.replace(base, **changes)


def parse_text(text: str, base: ExperimentConfig = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_mapping(data, text, base)


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` with TOML value syntax (bare words become strings)."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = (s.strip() for s in pair.split("=", 1))
        try:
            out[key] = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            out[key] = raw
    return out


def parse_config(path=None, overrides=(), text: str = None) -> ExperimentConfig:
    """Defaults <- config file (or ``text``) <- ``key=value`` overrides."""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_text(text) if text else ExperimentConfig()
    if overrides:
        cfg = from_mapping(parse_overrides(overrides), base=cfg)
    return cfg


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    out = {}
    for name in FIELDS:
        if name in ("sweep_param", "sweep_values"):
            continue
        out[name] = getattr(cfg, name)
    if cfg.sweep_param:
        out[cfg.sweep_param] = list(cfg.sweep_values)
    return out
