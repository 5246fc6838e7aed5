"""Descriptive traffic statistics: weekly deviation, daily profiles, in/out split, rush hours."""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, RangeError, SegmentLookupError
from .ingest import HourlySeries, Quality
from .network import Direction, Network

DEFAULT_CLIP = 2000.0


@dataclass
class WeeklyDeviation:
    week_start: dt.date
    sigma_h: np.ndarray
    totals: np.ndarray

    def day(self, weekday: int) -> np.ndarray:
        return self.sigma_h[24 * weekday: 24 * weekday + 24]


@dataclass
class DailyProfile:
    segment: int
    day: dt.date
    values: np.ndarray
    quality: np.ndarray


@dataclass
class InOutSplit:
    day: dt.date
    incoming: np.ndarray
    outgoing: np.ndarray
    net: np.ndarray

    def balance_ratio(self) -> float:
        total = float(np.sum(self.incoming + self.outgoing))
        return abs(float(np.sum(self.net))) / total if total > 0 else 0.0


@dataclass
class RushHourSnapshot:
    timestamp: np.datetime64
    flux_by_segment: dict[int, float]
    clip_value: float = DEFAULT_CLIP

    def exported(self) -> dict[int, float]:
        return {k: min(v, self.clip_value) for k, v in self.flux_by_segment.items()}

    def top(self, k: int) -> list[int]:
        return sorted(self.flux_by_segment, key=lambda s: (-self.flux_by_segment[s], s))[:k]

    def total(self) -> float:
        return float(sum(self.flux_by_segment.values()))


def local_maxima(values) -> list[int]:
    """Interior indices strictly greater than both neighbours."""
    v = np.asarray(values, float)
    if v.size < 3:
        return []
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
    return [int(i) + 1 for i in np.flatnonzero(inner)]


def _slice(s: HourlySeries, start: np.datetime64, n: int):
    a = int((start - s.t0).astype(int))
    if a < 0 or a + n > len(s):
        raise RangeError(f"{start} + {n}h outside data for segment {s.segment}")
    return s.values[a:a + n], s.quality[a:a + n]


def weekly_deviation(series: dict[int, HourlySeries], week_start: dt.date) -> WeeklyDeviation:
    """Total hourly flux over all series, divided by its 168-hour mean."""
    if week_start.weekday() != 0:
        raise ConfigError(f"week_start {week_start} is not a Monday")
    if not series:
        raise ConfigError("no series given")
    start = np.datetime64(week_start, "h")
    totals = np.zeros(168)
    for s in series.values():
        v, _ = _slice(s, start, 168)
        totals += v
    mean = totals.mean()
    if mean <= 0:
        raise RangeError("week has no traffic")
    return WeeklyDeviation(week_start, totals / mean, totals)


def daily_profile(series: dict[int, HourlySeries], segment: int, day: dt.date) -> DailyProfile:
    if segment not in series:
        raise SegmentLookupError(f"unknown segment id {segment}")
    v, q = _slice(series[segment], np.datetime64(day, "h"), 24)
    return DailyProfile(segment, day, v.copy(), q.copy())


def in_out_split(series: dict[int, HourlySeries], net: Network, day: dt.date) -> InOutSplit:
    """Per-hour incoming and outgoing sums over the direction-tagged segments present in ``series``."""
    if not net.access_roads:
        raise ConfigError("network has no tagged access roads")
    start = np.datetime64(day, "h")
    inc, out = np.zeros(24), np.zeros(24)
    for sid, s in series.items():
        d = net.segment(sid).direction
        if d is Direction.INTERNAL:
            continue
        v, _ = _slice(s, start, 24)
        if d is Direction.INCOMING:
            inc += v
        else:
            out += v
    return InOutSplit(day, inc, out, inc - out)


def rush_hour_snapshot(series: dict[int, HourlySeries], net: Network, timestamp,
                       clip_value: float = DEFAULT_CLIP) -> RushHourSnapshot:
    ts = np.datetime64(timestamp, "h")
    flux = {}
    for sid in net.sensorized_ids:
        if sid not in series:
            raise ConfigError(f"no series for sensorized segment {sid}")
        v, _ = _slice(series[sid], ts, 1)
        flux[sid] = float(v[0])
    return RushHourSnapshot(ts, flux, clip_value)


def _write_long(path, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "hour", "value"])
        w.writerows(rows)


def export_weekly_deviation(wd: WeeklyDeviation, out_dir) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / f"analytics_weekly_deviation_{wd.week_start}.csv"
    _write_long(path, (("sigma_h", h, repr(float(v))) for h, v in enumerate(wd.sigma_h)))
    peaks = {str(d): local_maxima(wd.day(d)) for d in range(7)}
    (out_dir / f"analytics_weekly_deviation_{wd.week_start}.json").write_text(json.dumps({
        "week_start": str(wd.week_start), "mean_sigma": float(wd.sigma_h.mean()),
        "max_sigma": float(wd.sigma_h.max()), "min_sigma": float(wd.sigma_h.min()),
        "local_maxima_by_weekday": peaks,
    }, indent=1))
    return path


def export_daily_profiles(profiles: list[DailyProfile], out_dir, day: dt.date) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / f"analytics_daily_profile_{day}.csv"
    names = {q.value: q.name.lower() for q in Quality}
    _write_long(path, ((f"segment_{p.segment}", h, repr(float(v)))
                       for p in profiles for h, v in enumerate(p.values)))
    (out_dir / f"analytics_daily_profile_{day}.json").write_text(json.dumps({
        str(p.segment): {"argmax_hour": int(np.argmax(p.values)), "total": float(p.values.sum()),
                         "quality": [names[int(q)] for q in p.quality]}
        for p in profiles
    }, indent=1))
    return path


def export_in_out(split: InOutSplit, out_dir) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / f"analytics_in_out_split_{split.day}.csv"
    rows = []
    for key, arr in (("incoming", split.incoming), ("outgoing", split.outgoing), ("net", split.net)):
        rows.extend((key, h, repr(float(v))) for h, v in enumerate(arr))
    _write_long(path, rows)
    (out_dir / f"analytics_in_out_split_{split.day}.json").write_text(json.dumps({
        "day": str(split.day), "incoming_total": float(split.incoming.sum()),
        "outgoing_total": float(split.outgoing.sum()), "net_total": float(split.net.sum()),
        "balance_ratio": split.balance_ratio(),
    }, indent=1))
    return path


def export_snapshot(snap: RushHourSnapshot, out_dir) -> Path:
    out_dir = Path(out_dir)
    stamp = str(snap.timestamp).replace(":", "")
    path = out_dir / f"analytics_rush_hour_snapshot_{stamp}.csv"
    hour = int(str(snap.timestamp)[-2:])
    _write_long(path, ((f"segment_{k}", hour, repr(float(v))) for k, v in sorted(snap.exported().items())))
    clip = snap.clip_value
    (out_dir / f"analytics_rush_hour_snapshot_{stamp}.json").write_text(json.dumps({
        "timestamp": str(snap.timestamp) + ":00:00Z",
        "clip_value": clip if math.isfinite(clip) else None,
        "total_flux": snap.total(), "top5": snap.top(5),
    }, indent=1))
    return path
