"""Synthetic 5-minute induction-loop records with a realistic weekly rhythm.

Expected hourly flux of segment ``s`` at hour ``t`` is::

    mean_scale[s] * shape_s[week_hour(t)] * (1 + latent(t - lag_s))

where ``shape_s`` is the weekly profile (split into incoming/outgoing
variants on access roads) and ``latent`` is a shared AR(1) city-activity
factor.  Access roads see the factor first; Internal segments see it
``propagation_lag`` hours later.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .network import Direction, Network
from .seeding import rng_for

HOURS_PER_WEEK = 168
BINS_PER_HOUR = 12

# (hour of day, relative level) knots per weekday, Monday first.  Values are
# interpolated log-linearly, so the profile is strictly monotone between
# consecutive knots and the knots are the only turning points.
WEEKDAY_KNOTS = ((3, 0.12), (8, 2.0), (11, 1.15), (14, 1.75), (16, 1.25), (19, 1.9))
FRIDAY_KNOTS = ((3, 0.12), (8, 1.95), (11, 1.2), (14, 2.0), (16, 1.2), (19, 1.55))
SATURDAY_KNOTS = ((3, 0.15), (13, 1.3), (16, 0.95), (19, 1.25))
SUNDAY_KNOTS = ((3, 0.16), (13, 1.15), (16, 0.85), (19, 1.05))
DEFAULT_KNOTS = (WEEKDAY_KNOTS,) * 4 + (FRIDAY_KNOTS, SATURDAY_KNOTS, SUNDAY_KNOTS)


@dataclass(frozen=True)
class WeeklyProfile:
    hourly_shape: np.ndarray
    peak_hours_weekday: tuple[int, ...] = (8, 14, 19)
    peak_hours_weekend: tuple[int, ...] = (13, 19)

    def __post_init__(self):
        shape = np.asarray(self.hourly_shape, dtype=float)
        if shape.shape != (HOURS_PER_WEEK,):
            raise ConfigError("hourly_shape must hold 168 values")
        if np.any(shape < 0) or not np.all(np.isfinite(shape)):
            raise ConfigError("hourly_shape must be finite and non-negative")
        object.__setattr__(self, "hourly_shape", shape)

    def day(self, weekday: int) -> np.ndarray:
        return self.hourly_shape[24 * weekday: 24 * weekday + 24]

    @classmethod
    def from_knots(cls, knots_per_day=DEFAULT_KNOTS) -> "WeeklyProfile":
        """Build a mean-one profile by cyclic log-linear interpolation of knots."""
        if len(knots_per_day) != 7:
            raise ConfigError("need knots for all seven weekdays")
        xs, ys = [], []
        for d, knots in enumerate(knots_per_day):
            for h, v in knots:
                if v <= 0:
                    raise ConfigError("knot levels must be positive")
                xs.append(24 * d + h)
                ys.append(math.log(v))
        xs, ys = np.array(xs, float), np.array(ys)
        order = np.argsort(xs)
        xs, ys = xs[order], ys[order]
        # wrap one knot on either side so Sunday night joins Monday morning
        xp = np.concatenate([[xs[-1] - HOURS_PER_WEEK], xs, [xs[0] + HOURS_PER_WEEK]])
        fp = np.concatenate([[ys[-1]], ys, [ys[0]]])
        shape = np.exp(np.interp(np.arange(HOURS_PER_WEEK, dtype=float), xp, fp))
        return cls(shape / shape.mean())

    @classmethod
    def default(cls) -> "WeeklyProfile":
        return cls.from_knots(DEFAULT_KNOTS)

    @classmethod
    def constant(cls) -> "WeeklyProfile":
        return cls(np.ones(HOURS_PER_WEEK))


@dataclass(frozen=True)
class SynthConfig:
    start_date: dt.date = dt.date(2016, 1, 1)
    end_date: dt.date = dt.date(2017, 2, 8)
    noise_rel_std: float = 0.1
    outlier_rate: float = 0.001
    outlier_magnitude: float = 5.0
    latent_factor_std: float = 0.06
    latent_phi: float = 0.9
    propagation_lag: int = 1
    in_out_asymmetry: float = 0.25
    free_speed_kmh: float = 50.0
    seed: int = 0

    def validate(self):
        if self.end_date < self.start_date:
            raise ConfigError("synth.end_date must not precede synth.start_date")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ConfigError("synth.outlier_rate must lie in [0, 1]")
        if self.noise_rel_std < 0:
            raise ConfigError("synth.noise_rel_std must be >= 0")
        if self.latent_factor_std < 0:
            raise ConfigError("synth.latent_factor_std must be >= 0")
        if not -1.0 < self.latent_phi < 1.0:
            raise ConfigError("synth.latent_phi must lie in (-1, 1)")
        if int(self.propagation_lag) != self.propagation_lag or self.propagation_lag < 0:
            raise ConfigError("synth.propagation_lag must be a non-negative integer")
        if self.outlier_magnitude < 0:
            raise ConfigError("synth.outlier_magnitude must be >= 0")
        # centred day weights reach 2 * asymmetry in magnitude; keep shapes >= 0
        if not 0.0 <= self.in_out_asymmetry < 0.5:
            raise ConfigError("synth.in_out_asymmetry must lie in [0, 0.5)")

    @property
    def n_hours(self) -> int:
        return ((self.end_date - self.start_date).days + 1) * 24


@dataclass(frozen=True)
class FluxRecord:
    timestamp: dt.datetime
    segment: int
    count: float
    velocity: float


def week_hour_index(start: np.datetime64, n_hours: int) -> np.ndarray:
    """Hour-of-week (Monday 00:00 = 0) for ``n_hours`` consecutive hours."""
    start = np.datetime64(start, "h")
    # 1970-01-01 was a Thursday, i.e. week hour 72
    offset = (start.astype("int64") + 72) % HOURS_PER_WEEK
    return (offset + np.arange(n_hours)) % HOURS_PER_WEEK


def _day_weights(shape: np.ndarray, asymmetry: float) -> np.ndarray:
    hours = np.arange(HOURS_PER_WEEK) % 24
    # +1 around 8 AM, -1 around 8 PM
    m = np.cos(2 * np.pi * (hours - 8) / 24.0)
    out = np.empty_like(m)
    for d in range(7):
        sl = slice(24 * d, 24 * d + 24)
        s = shape[sl]
        total = s.sum()
        out[sl] = m[sl] - (s @ m[sl]) / total if total > 0 else 0.0
    return asymmetry * out


def incoming_outgoing_balance_target(profile: WeeklyProfile, cfg: SynthConfig):
    """Incoming and outgoing weekly shapes for access roads.

    Incoming traffic is weighted up in the morning and outgoing in the
    evening; the weights are centred per day so that the daily integral of
    incoming minus outgoing vanishes.
    """
    shape = profile.hourly_shape
    w = _day_weights(shape, cfg.in_out_asymmetry)
    return shape * (1.0 + w), shape * (1.0 - w)


def latent_factor(cfg: SynthConfig, n_hours: int) -> np.ndarray:
    """Shared AR(1) activity factor for hours ``[-propagation_lag, n_hours)``."""
    lag = int(cfg.propagation_lag)
    n = n_hours + lag
    if cfg.latent_factor_std == 0:
        return np.zeros(n)
    rng = rng_for(cfg.seed, "synth", "latent")
    eps = rng.standard_normal(n)
    phi, sd = cfg.latent_phi, cfg.latent_factor_std
    innov = sd * math.sqrt(1.0 - phi * phi)
    x = np.empty(n)
    x[0] = sd * eps[0]
    for t in range(1, n):
        x[t] = phi * x[t - 1] + innov * eps[t]
    return x


@dataclass
class SynthData:
    """Dense block of generated records, one row per sensorized segment."""

    start: np.datetime64
    segment_ids: np.ndarray
    counts: np.ndarray  # (segments, hours, 12)
    velocity: np.ndarray  # (segments, hours, 12)
    outliers: np.ndarray  # bool, same shape as counts
    expected_hourly: np.ndarray  # (segments, hours)
    latent: np.ndarray = field(repr=False, default=None)

    @property
    def n_hours(self) -> int:
        return self.counts.shape[1]

    @property
    def n_records(self) -> int:
        return self.counts.size

    def records(self) -> Iterator[FluxRecord]:
        """Records in timestamp order, ties broken by segment id."""
        base = self.start.astype("datetime64[m]").astype(dt.datetime).replace(
            tzinfo=dt.timezone.utc
        )
        ids = [int(i) for i in self.segment_ids]
        for t in range(self.n_hours):
            for k in range(BINS_PER_HOUR):
                ts = base + dt.timedelta(minutes=60 * t + 5 * k)
                for j, sid in enumerate(ids):
                    yield FluxRecord(
                        ts, sid, float(self.counts[j, t, k]), float(self.velocity[j, t, k])
                    )


def generate_block(net: Network, profile: WeeklyProfile, cfg: SynthConfig) -> SynthData:
    if len(net) == 0:
        raise ConfigError("cannot generate records for an empty network")
    cfg.validate()
    seg_ids = np.array(net.sensorized_ids, dtype=np.int64)
    if seg_ids.size == 0:
        raise ConfigError("network has no sensorized segments")

    n_hours = cfg.n_hours
    start = np.datetime64(cfg.start_date, "h")
    wh = week_hour_index(start, n_hours)
    shape_in, shape_out = incoming_outgoing_balance_target(profile, cfg)
    latent = latent_factor(cfg, n_hours)
    lag = int(cfg.propagation_lag)

    S = seg_ids.size
    counts = np.empty((S, n_hours, BINS_PER_HOUR))
    velocity = np.empty_like(counts)
    outliers = np.zeros(counts.shape, dtype=bool)
    expected = np.empty((S, n_hours))

    for j, sid in enumerate(seg_ids):
        seg = net.segment(int(sid))
        if seg.direction is Direction.INCOMING:
            shape, activity = shape_in, latent[lag:]
        elif seg.direction is Direction.OUTGOING:
            shape, activity = shape_out, latent[lag:]
        else:
            shape, activity = profile.hourly_shape, latent[: n_hours]
        hourly = seg.mean_scale * shape[wh] * np.maximum(0.0, 1.0 + activity)
        expected[j] = hourly

        rng = rng_for(cfg.seed, "synth", "segment", int(sid))
        z = rng.standard_normal((n_hours, BINS_PER_HOUR))
        c = (hourly / BINS_PER_HOUR)[:, None] * np.maximum(0.0, 1.0 + cfg.noise_rel_std * z)
        if cfg.outlier_rate > 0:
            hit = rng.random((n_hours, BINS_PER_HOUR)) < cfg.outlier_rate
            c = np.where(hit, c * cfg.outlier_magnitude, c)
            outliers[j] = hit
        counts[j] = c

        capacity = 2.5 * seg.mean_scale
        ratio = np.minimum(1.0, hourly / capacity)[:, None]
        v = cfg.free_speed_kmh * (1.0 - 0.6 * ratio) * (1.0 + 0.05 * rng.standard_normal(c.shape))
        velocity[j] = np.maximum(0.0, v)

    return SynthData(start, seg_ids, counts, velocity, outliers, expected, latent)


def generate(net: Network, profile: WeeklyProfile, cfg: SynthConfig) -> Iterator[FluxRecord]:
    """Stream of 5-minute records, timestamp-ordered."""
    return generate_block(net, profile, cfg).records()


def format_timestamp(ts: dt.datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_records_csv(data: SynthData, path) -> int:
    """Write the canonical raw CSV; returns the number of data rows."""
    path = Path(path)
    ids = [str(int(i)) for i in data.segment_ids]
    base = data.start.astype("datetime64[m]").astype(dt.datetime)
    n = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "segment_id", "count", "velocity"])
        counts, vel = data.counts, data.velocity
        for t in range(data.n_hours):
            for k in range(BINS_PER_HOUR):
                ts = (base + dt.timedelta(minutes=60 * t + 5 * k)).strftime("%Y-%m-%dT%H:%M:%SZ")
                w.writerows(
                    (ts, sid, repr(float(counts[j, t, k])), repr(float(vel[j, t, k])))
                    for j, sid in enumerate(ids)
                )
                n += len(ids)
    return n
