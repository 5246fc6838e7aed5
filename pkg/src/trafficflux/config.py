"""JSON run configuration: schema validation, dotted overrides and seed derivation."""
from __future__ import annotations

import copy
import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .forecast import Coverage
from .ingest import IngestConfig
from .lstm import HyperParams
from .network import NetworkConfig
from .seeding import derive_seed
from .synth import SynthConfig


@dataclass
class ForecastSettings:
    target: int | None = None
    radius_m: float = 1000.0
    train_start: str | None = "2016-01-01"
    train_end: str | None = "2016-12-31"
    test_start: str | None = "2017-02-02"
    test_end: str | None = "2017-02-08"
    grid: list = field(default_factory=lambda: [
        {"coverage": c.value, "lookback": L, "horizon": H}
        for c in Coverage for L in (24, 5) for H in (1, 2)
    ])
    ensemble_size: int = 10


@dataclass
class AnalyticsSettings:
    week_start: str | None = None
    day: str | None = None
    snapshot_hours: list = field(default_factory=lambda: [3, 8, 19])
    clip_value: float = 2000.0


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "run"
    jobs: int = 1
    network: NetworkConfig = field(default_factory=NetworkConfig)
    synth: dict = field(default_factory=dict)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    forecast: ForecastSettings = field(default_factory=ForecastSettings)
    analytics: AnalyticsSettings = field(default_factory=AnalyticsSettings)

    # --- derived objects -------------------------------------------------
    def network_seed(self) -> int:
        return derive_seed(self.seed, "network")

    def synth_config(self) -> SynthConfig:
        kw = dict(self.synth)
        for k in ("start_date", "end_date"):
            if k in kw:
                kw[k] = _parse_date(kw[k], f"synth.{k}")
        return SynthConfig(seed=derive_seed(self.seed, "synth"), **kw)

    def ensemble_seed(self, label: str) -> int:
        # members use base..base+n-1, keep headroom below 2**63
        return derive_seed(self.seed, "forecast", label) >> 8

    def date_ranges(self):
        """(train_range, test_range) as inclusive date pairs."""
        sc = self.synth_config()
        f = self.forecast
        if f.test_start and f.test_end:
            test = (_parse_date(f.test_start, "forecast.test_start"), _parse_date(f.test_end, "forecast.test_end"))
        else:
            test = (sc.end_date - dt.timedelta(days=6), sc.end_date)
        if f.train_start and f.train_end:
            train = (_parse_date(f.train_start, "forecast.train_start"),
                     _parse_date(f.train_end, "forecast.train_end"))
        else:
            train = (sc.start_date, test[0] - dt.timedelta(days=1))
        for name, (a, b) in (("train", train), ("test", test)):
            if b < a:
                raise ConfigError(f"forecast.{name} range ends before it starts")
            if a < sc.start_date or b > sc.end_date:
                raise ConfigError(f"forecast.{name} range {a}..{b} outside generated data")
        return train, test

    def validate(self):
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.network.validate()
        self.synth_config().validate()
        self.ingest.validate()
        self.hp.validate()
        if self.forecast.ensemble_size < 1:
            raise ConfigError("forecast.ensemble_size must be >= 1")
        if self.forecast.radius_m < 0:
            raise ConfigError("forecast.radius_m must be >= 0")
        if not self.forecast.grid:
            raise ConfigError("forecast.grid must not be empty")
        for k, cell in enumerate(self.forecast.grid):
            if set(cell) != {"coverage", "lookback", "horizon"}:
                raise ConfigError(f"forecast.grid[{k}] needs exactly coverage, lookback, horizon")
            try:
                Coverage(cell["coverage"])
            except ValueError:
                raise ConfigError(f"forecast.grid[{k}].coverage: unknown value {cell['coverage']!r}") from None
            for key in ("lookback", "horizon"):
                if not isinstance(cell[key], int) or cell[key] < 1:
                    raise ConfigError(f"forecast.grid[{k}].{key} must be a positive integer")
        self.date_ranges()
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d, default=str))


_SECTIONS = {
    "network": NetworkConfig,
    "ingest": IngestConfig,
    "hp": HyperParams,
    "forecast": ForecastSettings,
    "analytics": AnalyticsSettings,
}
_SYNTH_FIELDS = {f.name: f for f in dataclasses.fields(SynthConfig) if f.name != "seed"}
_TOP = {"seed": int, "output_dir": str, "jobs": int}


def _parse_date(value, name) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{name}: not an ISO date: {value!r}") from None


def _check_type(name: str, value, expected):
    """Coerce ``value`` to the declared field type or raise a ConfigError naming the field."""
    origin = expected if isinstance(expected, str) else getattr(expected, "__name__", str(expected))
    t = str(origin)
    if value is None:
        if "None" in t:
            return None
        raise ConfigError(f"{name}: must not be null")
    if "bool" in t and "int" not in t:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return value
    if "float" in t:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if "int" in t:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if "str" in t:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if "list" in t:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return value
    if "date" in t:
        return str(_parse_date(value, name))
    return value


def _build_section(name, cls, raw) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in raw.items():
        if k not in fields:
            raise ConfigError(f"{name}.{k}: unknown key")
        kw[k] = _check_type(f"{name}.{k}", v, fields[k].type)
    return cls(**kw)


def from_dict(raw: dict) -> RunConfig:
    """Validated RunConfig from a plain dict; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    kw = {}
    for k, v in raw.items():
        if k in _TOP:
            kw[k] = _check_type(k, v, _TOP[k].__name__)
        elif k in _SECTIONS:
            kw[k] = _build_section(k, _SECTIONS[k], v)
        elif k == "synth":
            if not isinstance(v, dict):
                raise ConfigError("synth: expected an object")
            syn = {}
            for sk, sv in v.items():
                if sk not in _SYNTH_FIELDS:
                    raise ConfigError(f"synth.{sk}: unknown key")
                syn[sk] = _check_type(f"synth.{sk}", sv, _SYNTH_FIELDS[sk].type)
            kw["synth"] = syn
        else:
            raise ConfigError(f"{k}: unknown key")
    return RunConfig(**kw).validate()


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as JSON, else stay strings."""
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = path.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r} descends into a non-object")
        node[parts[-1]] = value
    return raw


def load(path: str | Path | None, overrides: list[str] | None = None, seed: int | None = None,
         out: str | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    raw = apply_overrides(raw, overrides or [])
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output_dir"] = out
    return from_dict(raw)
