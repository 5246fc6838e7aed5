"""Error metrics, naive baselines and the coverage x lookback x horizon grid."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lstm
from .errors import ConfigError, RangeError, ShapeError
from .forecast import Coverage, ForecastRun, WindowConfig, build_train_test, run_ensemble
from .ingest import HourlySeries

log = logging.getLogger(__name__)

WEEK = 168


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ShapeError("rmse of empty series")
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


def _values_at(s: HourlySeries, times) -> np.ndarray:
    idx = ((np.asarray(times, "datetime64[h]") - s.t0).astype(int))
    if idx.size and (idx.min() < 0 or idx.max() >= len(s)):
        raise RangeError("insufficient history for baseline")
    return s.values[idx]


def baselines(series: dict[int, HourlySeries], wc: WindowConfig, target_times) -> dict[str, np.ndarray]:
    """Naive forecasts for each target hour ``T``.

    persistence: the last observed value, ``flux(T - H)``;
    seasonal_naive: the value one week earlier, ``flux(T - 168)``.
    """
    s = series[wc.target]
    times = np.asarray(target_times, "datetime64[h]")
    H = np.timedelta64(int(wc.horizon), "h")
    return {
        "persistence": _values_at(s, times - H),
        "seasonal_naive": _values_at(s, times - np.timedelta64(WEEK, "h")),
    }


@dataclass
class EvaluationReport:
    global_rmse: float
    per_day_rmse: dict[str, float]
    per_day_mean_flux: dict[str, float]
    per_day_count: dict[str, int]
    relative_error: float
    baseline_rmse: dict[str, float] = field(default_factory=dict)
    per_day_baseline_rmse: dict[str, dict[str, float]] = field(default_factory=dict)

    def recombined_rmse(self) -> float:
        """Global RMSE rebuilt from the per-day values, weighted by hour counts."""
        n = sum(self.per_day_count.values())
        ss = sum(self.per_day_count[d] * self.per_day_rmse[d] ** 2 for d in self.per_day_rmse)
        return float(np.sqrt(ss / n))

    def weekday_relative_error(self, weekend: bool) -> float:
        import datetime as dt

        days = [d for d in self.per_day_rmse if (dt.date.fromisoformat(d).weekday() >= 5) == weekend]
        if not days:
            return float("nan")
        return float(np.mean([self.per_day_rmse[d] / self.per_day_mean_flux[d] for d in days]))

    def to_dict(self) -> dict:
        return {
            "global_rmse": self.global_rmse,
            "relative_error": self.relative_error,
            "per_day_rmse": self.per_day_rmse,
            "per_day_mean_flux": self.per_day_mean_flux,
            "per_day_count": self.per_day_count,
            "baseline_rmse": self.baseline_rmse,
            "per_day_baseline_rmse": self.per_day_baseline_rmse,
        }


def evaluate(pred, truth, times, baseline_preds: dict[str, np.ndarray] | None = None) -> EvaluationReport:
    pred = np.asarray(pred, float)
    truth = np.asarray(truth, float)
    days = np.asarray(times, "datetime64[h]").astype("datetime64[D]")
    g = rmse(pred, truth)
    per_rmse, per_mean, per_n = {}, {}, {}
    per_base: dict[str, dict[str, float]] = {}
    for d in np.unique(days):
        m = days == d
        key = str(d)
        per_rmse[key] = rmse(pred[m], truth[m])
        per_mean[key] = float(truth[m].mean())
        per_n[key] = int(m.sum())
        for name, b in (baseline_preds or {}).items():
            per_base.setdefault(name, {})[key] = rmse(np.asarray(b)[m], truth[m])
    mean_truth = float(truth.mean())
    return EvaluationReport(
        global_rmse=g,
        per_day_rmse=per_rmse,
        per_day_mean_flux=per_mean,
        per_day_count=per_n,
        relative_error=g / mean_truth if mean_truth > 0 else float("inf"),
        baseline_rmse={k: rmse(v, truth) for k, v in (baseline_preds or {}).items()},
        per_day_baseline_rmse=per_base,
    )


def evaluate_run(run: ForecastRun, series: dict[int, HourlySeries]) -> EvaluationReport:
    base = baselines(series, run.wc, run.times)
    run.report = evaluate(run.mean, run.truth, run.times, base)
    return run.report


@dataclass(frozen=True)
class GridCell:
    coverage: Coverage
    lookback: int
    horizon: int

    def key(self) -> tuple[str, int, int]:
        return (self.coverage.value, self.lookback, self.horizon)


DEFAULT_GRID = tuple(
    GridCell(c, L, H) for c in Coverage for L in (24, 5) for H in (1, 2)
)


def comparison_grid(series, net, target: int, cells, hp: lstm.HyperParams, train_range, test_range,
                    ensemble_size: int = 10, base_seed: int = 0, radius_m: float = 1000.0,
                    jobs: int = 1) -> dict[tuple[str, int, int], ForecastRun]:
    """Run and evaluate one ensemble per grid cell; reports are attached to each run."""
    cells = list(cells)
    if not cells:
        raise ConfigError("comparison grid is empty")
    out = {}
    for cell in cells:
        wc = WindowConfig(cell.lookback, cell.horizon, cell.coverage, target, radius_m)
        train_ds, test_ds = build_train_test(series, net, wc, train_range, test_range)
        run = run_ensemble(train_ds, test_ds, hp, ensemble_size, base_seed, jobs=jobs)
        evaluate_run(run, series)
        log.info("cell=%s rmse=%.3f persistence=%.3f", wc.label(), run.report.global_rmse,
                 run.report.baseline_rmse["persistence"])
        out[cell.key()] = run
    return out


def write_grid_table(runs: dict[tuple[str, int, int], ForecastRun], path):
    """Long table with one row per (cell, day) plus an ``all`` row per cell."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coverage", "lookback_h", "horizon_h", "day", "rmse", "mean_flux", "rel_error"])
        for (cov, L, H), run in sorted(runs.items()):
            r = run.report
            for day in sorted(r.per_day_rmse):
                w.writerow([cov, L, H, day, repr(r.per_day_rmse[day]), repr(r.per_day_mean_flux[day]),
                            repr(r.per_day_rmse[day] / r.per_day_mean_flux[day])])
            w.writerow([cov, L, H, "all", repr(r.global_rmse), repr(float(np.mean(run.truth))),
                        repr(r.relative_error)])


def grid_summary(runs: dict[tuple[str, int, int], ForecastRun]) -> dict:
    return {
        f"{cov}_L{L}_H{H}": {
            "global_rmse": run.report.global_rmse,
            "relative_error": run.report.relative_error,
            "baseline_rmse": run.report.baseline_rmse,
        }
        for (cov, L, H), run in sorted(runs.items())
    }


def write_grid_summary(runs, path):
    Path(path).write_text(json.dumps(grid_summary(runs), indent=1))
