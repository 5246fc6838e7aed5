"""3-sigma cleaning of 5-minute counts and aggregation to hourly flux series."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, EmptyInputError, RangeError
from .network import Network
from .synth import BINS_PER_HOUR, HOURS_PER_WEEK, FluxRecord, SynthData, week_hour_index


class Quality(enum.IntEnum):
    OK = 0
    IMPUTED = 1
    MISSING = 2


@dataclass
class CleaningWindow:
    hour_start: dt.datetime
    segment: int
    raw_values: list[float]

    @property
    def m(self) -> float:
        return window_stats(self.raw_values)[0]

    @property
    def sigma(self) -> float:
        return window_stats(self.raw_values)[1]


def _pow2_exponent(values) -> int:
    """Exponent e with max|v| / 2**e in [0.5, 1); scaling by 2**-e is exact."""
    top = max((abs(v) for v in values), default=0.0)
    return math.frexp(top)[1] if top > 0 and math.isfinite(top) else 0


def _scaled_stats(values) -> tuple[float, float]:
    n = len(values)
    m = math.fsum(values) / n
    var = math.fsum((v - m) ** 2 for v in values) / n
    return m, math.sqrt(var)


def window_stats(values) -> tuple[float, float]:
    """Mean and population standard deviation (two-pass).

    Computed on values rescaled by a power of two, which is exact and keeps
    squared deviations clear of underflow/overflow.
    """
    values = [float(v) for v in values]
    if not values:
        raise EmptyInputError("empty cleaning window")
    e = _pow2_exponent(values)
    m, s = _scaled_stats([math.ldexp(v, -e) for v in values])
    return math.ldexp(m, e), math.ldexp(s, e)


def clean_window(w: CleaningWindow | Iterable[float], k: float = 3.0) -> list[float]:
    """Keep the values inside ``[m - k*sigma, m + k*sigma]`` of the full window.

    Single pass: ``m`` and ``sigma`` come from every raw value, including the
    ones that end up discarded.
    """
    values = list(w.raw_values if isinstance(w, CleaningWindow) else w)
    if not values:
        raise EmptyInputError("empty cleaning window")
    e = _pow2_exponent(values)
    scaled = [math.ldexp(float(v), -e) for v in values]
    m, s = _scaled_stats(scaled)
    lo, hi = m - k * s, m + k * s
    return [v for v, x in zip(values, scaled) if lo <= x <= hi]


def clean_block(counts: np.ndarray, k: float = 3.0) -> np.ndarray:
    """Vectorised :func:`clean_window` over the last axis; NaN marks absent bins.

    Returns the boolean mask of retained bins.
    """
    present = ~np.isnan(counts)
    top = np.max(np.where(present, np.abs(counts), 0.0), axis=-1, keepdims=True)
    _, e = np.frexp(np.where(np.isfinite(top), top, 0.0))
    counts = np.ldexp(counts, -e)
    n = present.sum(axis=-1, keepdims=True)
    safe_n = np.maximum(n, 1)
    filled = np.where(present, counts, 0.0)
    m = filled.sum(axis=-1, keepdims=True) / safe_n
    dev = np.where(present, counts - m, 0.0)
    s = np.sqrt((dev * dev).sum(axis=-1, keepdims=True) / safe_n)
    with np.errstate(invalid="ignore"):
        keep = present & (counts >= m - k * s) & (counts <= m + k * s)
    return keep


def aggregate_hour(retained, n_expected: int = BINS_PER_HOUR, min_fraction: float = 0.5):
    """Hourly flux from retained 5-minute counts: ``mean * n_expected``."""
    n = len(retained)
    if n == 0:
        return float("nan"), Quality.MISSING
    flux = math.fsum(retained) / n * n_expected
    threshold = math.ceil(min_fraction * n_expected)
    return flux, Quality.OK if n >= threshold else Quality.IMPUTED


@dataclass
class HourlySeries:
    segment: int
    t0: np.datetime64
    values: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        self.t0 = np.datetime64(self.t0, "h")
        self.values = np.asarray(self.values, dtype=float)
        self.quality = np.asarray(self.quality, dtype=np.int8)
        if self.values.shape != self.quality.shape:
            raise ConfigError("values and quality must have equal length")

    def __len__(self):
        return self.values.size

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + np.arange(len(self), dtype="timedelta64[h]")

    def index_of(self, ts) -> int:
        i = int((np.datetime64(ts, "h") - self.t0).astype(int))
        if not 0 <= i < len(self):
            raise RangeError(f"{ts} outside series range")
        return i

    def scaled(self, k: float) -> "HourlySeries":
        return HourlySeries(self.segment, self.t0, self.values * k, self.quality.copy())


@dataclass
class IngestConfig:
    sigma_k: float = 3.0
    min_fraction: float = 0.5

    def validate(self):
        if self.sigma_k <= 0:
            raise ConfigError("ingest.sigma_k must be positive")
        if not 0.0 < self.min_fraction <= 1.0:
            raise ConfigError("ingest.min_fraction must lie in (0, 1]")


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_rejected: int = 0
    outliers_removed: int = 0
    hours_imputed: int = 0
    rejected_unknown_segment: int = 0
    rejected_lines: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_rejected": self.rows_rejected,
            "outliers_removed": self.outliers_removed,
            "hours_imputed": self.hours_imputed,
        }

    def save(self, path):
        d = self.summary()
        d["rejected_unknown_segment"] = self.rejected_unknown_segment
        d["rejected_lines"] = [{"line": n, "reason": r} for n, r in self.rejected_lines[:1000]]
        Path(path).write_text(json.dumps(d, indent=1))


def date_range_hours(start: dt.date, end: dt.date) -> tuple[np.datetime64, int]:
    """Hour grid covering the calendar days ``start``..``end`` inclusive."""
    if end < start:
        raise RangeError("date range end precedes start")
    return np.datetime64(start, "h"), ((end - start).days + 1) * 24


def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    elif text.endswith("+00:00"):
        text = text[:-6]
    return np.datetime64(dt.datetime.fromisoformat(text), "m")


def read_records_csv(path, report: IngestReport | None = None) -> Iterator[FluxRecord]:
    """Parse the raw CSV, skipping malformed rows (logged with their line number)."""
    report = report if report is not None else IngestReport()
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "segment_id", "count", "velocity"]:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in reader:
            report.rows_read += 1
            line = reader.line_num
            try:
                ts = _parse_timestamp(row[0])
                rec = FluxRecord(
                    ts.astype(dt.datetime).replace(tzinfo=dt.timezone.utc),
                    int(row[1]),
                    float(row[2]),
                    float(row[3]),
                )
                if len(row) != 4 or not math.isfinite(rec.count) or rec.count < 0:
                    raise ValueError("bad count")
                if ts.astype(dt.datetime).minute % 5 != 0:
                    raise ValueError("timestamp not on a 5-minute boundary")
            except (ValueError, IndexError) as exc:
                report.rows_rejected += 1
                report.rejected_lines.append((line, str(exc)))
                continue
            yield rec


def records_to_block(records: Iterable[FluxRecord], net: Network, t0: np.datetime64,
                     n_hours: int, report: IngestReport) -> tuple[np.ndarray, np.ndarray]:
    """Scatter records onto a ``(segments, hours, 12)`` grid, NaN where absent."""
    ids = np.array(net.sensorized_ids, dtype=np.int64)
    pos = {int(s): j for j, s in enumerate(ids)}
    grid = np.full((ids.size, n_hours, BINS_PER_HOUR), np.nan)
    t0_min = np.datetime64(t0, "m").astype("int64")
    for rec in records:
        j = pos.get(int(rec.segment))
        if j is None:
            report.rows_rejected += 1
            report.rejected_unknown_segment += 1
            continue
        ts = rec.timestamp
        minute = int(np.datetime64(ts.replace(tzinfo=None), "m").astype("int64")) - t0_min
        t, k = divmod(minute, 60)
        if not 0 <= t < n_hours:
            continue
        k //= 5
        if not np.isnan(grid[j, t, k]):
            report.rows_rejected += 1
            report.rejected_lines.append((-1, f"duplicate record segment={rec.segment} ts={ts}"))
            continue
        grid[j, t, k] = rec.count
    return ids, grid


def _fill_gaps(values: np.ndarray, quality: np.ndarray, t0: np.datetime64) -> int:
    """Impute Missing hours in place; returns how many hours were filled."""
    missing = quality == Quality.MISSING
    if not missing.any():
        return 0
    ok = quality == Quality.OK
    if not ok.any():
        values[missing] = 0.0
        return 0
    idx = np.arange(values.size)
    ok_idx = idx[ok]
    interior = missing & (idx > ok_idx[0]) & (idx < ok_idx[-1])
    values[interior] = np.interp(idx[interior], ok_idx, values[ok])

    edge = missing & ~interior
    if edge.any():
        wh = week_hour_index(t0, values.size)
        sums = np.bincount(wh[ok], weights=values[ok], minlength=HOURS_PER_WEEK)
        cnt = np.bincount(wh[ok], minlength=HOURS_PER_WEEK)
        fallback = values[ok].mean()
        with np.errstate(invalid="ignore", divide="ignore"):
            wmean = np.where(cnt > 0, sums / np.maximum(cnt, 1), fallback)
        values[edge] = wmean[wh[edge]]
    quality[missing] = Quality.IMPUTED
    return int(missing.sum())


def series_from_block(ids, grid: np.ndarray, t0: np.datetime64, cfg: IngestConfig | None = None,
                      report: IngestReport | None = None) -> dict[int, HourlySeries]:
    """Clean, aggregate and gap-fill a dense record grid."""
    cfg = cfg or IngestConfig()
    cfg.validate()
    report = report if report is not None else IngestReport()
    keep = clean_block(grid, cfg.sigma_k)
    present = ~np.isnan(grid)
    report.outliers_removed += int((present & ~keep).sum())

    n_kept = keep.sum(axis=-1)
    kept_sum = np.where(keep, grid, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        flux = kept_sum / n_kept * BINS_PER_HOUR
    threshold = math.ceil(cfg.min_fraction * BINS_PER_HOUR)
    quality = np.where(
        n_kept == 0, Quality.MISSING, np.where(n_kept >= threshold, Quality.OK, Quality.IMPUTED)
    ).astype(np.int8)

    out = {}
    for j, sid in enumerate(ids):
        v = flux[j].copy()
        q = quality[j].copy()
        report.hours_imputed += int((q == Quality.IMPUTED).sum())
        report.hours_imputed += _fill_gaps(v, q, t0)
        out[int(sid)] = HourlySeries(int(sid), t0, v, q)
    return out


def build_series(records: Iterable[FluxRecord], net: Network, date_range: tuple[dt.date, dt.date],
                 cfg: IngestConfig | None = None, report: IngestReport | None = None
                 ) -> dict[int, HourlySeries]:
    """One cleaned hourly series per sensorized segment over ``date_range`` (inclusive days)."""
    report = report if report is not None else IngestReport()
    t0, n_hours = date_range_hours(*date_range)
    ids, grid = records_to_block(records, net, t0, n_hours, report)
    return series_from_block(ids, grid, t0, cfg, report)


def build_series_from_synth(data: SynthData, date_range=None, cfg: IngestConfig | None = None,
                            report: IngestReport | None = None) -> dict[int, HourlySeries]:
    """Fast path for in-memory generator output; same semantics as :func:`build_series`."""
    report = report if report is not None else IngestReport()
    grid, t0 = data.counts, data.start
    if date_range is not None:
        t0, n_hours = date_range_hours(*date_range)
        a = int((t0 - data.start).astype(int))
        if a < 0 or a + n_hours > data.n_hours:
            raise RangeError("date range outside generated data")
        grid = grid[:, a: a + n_hours]
    report.rows_read += grid.size
    return series_from_block(data.segment_ids, grid, t0, cfg, report)


def write_hourly_csv(series: dict[int, HourlySeries], path):
    names = {q.value: q.name for q in Quality}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "segment_id", "flux", "quality"])
        for sid in sorted(series):
            s = series[sid]
            stamps = [str(t) + ":00:00Z" for t in s.timestamps]
            w.writerows(
                (ts, sid, repr(float(v)), names[int(q)].lower())
                for ts, v, q in zip(stamps, s.values, s.quality)
            )


def read_hourly_csv(path) -> dict[int, HourlySeries]:
    codes = {q.name.lower(): q.value for q in Quality}
    rows: dict[int, list] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            ts = np.datetime64(r["timestamp"].rstrip("Z"), "h")
            v = float(r["flux"]) if r["flux"] not in ("", "nan") else float("nan")
            rows.setdefault(int(r["segment_id"]), []).append((ts, v, codes[r["quality"]]))
    out = {}
    for sid, items in rows.items():
        items.sort(key=lambda x: x[0])
        t0 = items[0][0]
        out[sid] = HourlySeries(sid, t0, [x[1] for x in items], [x[2] for x in items])
    return out



__all__ = [
    "CleaningWindow",
    "HourlySeries",
    "IngestConfig",
    "IngestReport",
    "Quality",
    "aggregate_hour",
    "build_series",
    "build_series_from_synth",
    "clean_block",
    "clean_window",
    "read_hourly_csv",
    "read_records_csv",
    "series_from_block",
    "window_stats",
    "write_hourly_csv",
]
