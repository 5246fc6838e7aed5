"""Windowed datasets under the three coverage paradigms, ensembles and prediction.

Time convention: a sample anchored at hour ``t`` sees the window
``[t - L, t)`` (last observed hour ``t - 1``) and targets hour ``t - 1 + H``.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lstm
from .errors import ConfigError, InsufficientDataError, NumericalError, RangeError
from .ingest import HourlySeries, Quality
from .network import Network, segments_within

log = logging.getLogger(__name__)

DEFAULT_RADIUS_M = 1000.0


class Coverage(enum.Enum):
    TARGET_ONLY = "target_only"
    NEARBY = "nearby"
    ALL = "all"


@dataclass(frozen=True)
class WindowConfig:
    lookback: int = 5
    horizon: int = 1
    coverage: Coverage = Coverage.ALL
    target: int | None = None
    radius_m: float = DEFAULT_RADIUS_M

    def __post_init__(self):
        if not isinstance(self.coverage, Coverage):
            object.__setattr__(self, "coverage", Coverage(self.coverage))
        if int(self.lookback) < 1 or int(self.horizon) < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if self.radius_m < 0:
            raise ConfigError("radius_m must be >= 0")

    def with_target(self, target: int) -> "WindowConfig":
        return WindowConfig(self.lookback, self.horizon, self.coverage, target, self.radius_m)

    def label(self) -> str:
        return f"{self.coverage.value}_L{self.lookback}_H{self.horizon}"

    def to_dict(self) -> dict:
        return {"lookback": self.lookback, "horizon": self.horizon,
                "coverage": self.coverage.value, "target": self.target, "radius_m": self.radius_m}


def default_target(net: Network) -> int:
    """Busiest sensorized Internal segment, else the busiest sensorized segment.

    Internal segments see the city activity factor after the access roads,
    so they are the ones whose forecasts can profit from wider coverage.
    """
    from .network import Direction

    try:
        return net.busiest_segment(Direction.INTERNAL)
    except LookupError:
        return net.busiest_segment()


def feature_segments(net: Network, wc: WindowConfig) -> list[int]:
    target = wc.target
    seg = net.segment(target)
    if not seg.sensorized:
        raise ConfigError(f"target segment {target} is not sensorized")
    if wc.coverage is Coverage.TARGET_ONLY:
        return [target]
    if wc.coverage is Coverage.NEARBY:
        return segments_within(net, target, wc.radius_m)
    return list(net.sensorized_ids)


@dataclass
class WindowedDataset:
    X: np.ndarray  # (N, L, F), normalised
    y: np.ndarray  # (N,), normalised target
    y_raw: np.ndarray  # (N,), vehicles/hour
    target_times: np.ndarray  # datetime64[h] of each target hour
    feature_segments: list[int]
    wc: WindowConfig
    x_norm: lstm.Normalizer
    y_norm: lstm.Normalizer

    def __len__(self):
        return len(self.y)


def _hour_range(range_) -> tuple[np.datetime64, np.datetime64]:
    a, b = range_
    if isinstance(a, dt.date) and not isinstance(a, dt.datetime) and not isinstance(a, np.datetime64):
        # calendar days, inclusive
        return np.datetime64(a, "h"), np.datetime64(b, "h") + np.timedelta64(24, "h")
    return np.datetime64(a, "h"), np.datetime64(b, "h")


def _matrix(series: dict[int, HourlySeries], ids, start, end):
    n = int((end - start).astype(int))
    cols, quals = [], []
    for sid in ids:
        if sid not in series:
            raise ConfigError(f"no series for segment {sid}")
        s = series[sid]
        a = int((start - s.t0).astype(int))
        if a < 0 or a + n > len(s):
            raise RangeError(f"range {start}..{end} outside data for segment {sid}")
        cols.append(s.values[a:a + n])
        quals.append(s.quality[a:a + n])
    return np.column_stack(cols), np.column_stack(quals)


def build_dataset(series: dict[int, HourlySeries], net: Network, wc: WindowConfig, range_,
                  x_norm: lstm.Normalizer | None = None,
                  y_norm: lstm.Normalizer | None = None) -> WindowedDataset:
    """All windows inside ``range_`` (``[start, end)`` hours, or inclusive dates).

    Normalisers default to the statistics of ``range_`` itself; pass the
    training-range normalisers when building test data.
    """
    if wc.target is None:
        raise ConfigError("window config has no target segment")
    feats = feature_segments(net, wc)
    start, end = _hour_range(range_)
    M, Q = _matrix(series, feats, start, end)
    ti = feats.index(wc.target)
    tv, tq = M[:, ti], Q[:, ti]
    L, H = int(wc.lookback), int(wc.horizon)
    n = M.shape[0]
    anchors = np.arange(L, n - H + 1)
    if anchors.size == 0:
        raise InsufficientDataError(f"range of {n} hours too short for L={L}, H={H}")

    bad = np.concatenate([[0], np.cumsum(tq == Quality.MISSING)])
    tgt = anchors - 1 + H
    # window [t-L, t) and the target hour must be free of Missing target hours
    ok = (bad[anchors] - bad[anchors - L] == 0) & (tq[tgt] != Quality.MISSING)
    anchors, tgt = anchors[ok], tgt[ok]

    if x_norm is None:
        x_norm = lstm.Normalizer.fit(M, axis=0)
    if y_norm is None:
        y_norm = lstm.Normalizer.fit(tv)
    Z = x_norm.normalize(M)
    offs = np.arange(-L, 0)
    X = Z[anchors[:, None] + offs[None, :]]
    y_raw = tv[tgt]
    return WindowedDataset(
        X=X,
        y=y_norm.normalize(y_raw),
        y_raw=y_raw,
        target_times=start + tgt.astype("timedelta64[h]"),
        feature_segments=feats,
        wc=wc,
        x_norm=x_norm,
        y_norm=y_norm,
    )


def build_train_test(series, net, wc: WindowConfig, train_range, test_range):
    """Training windows inside ``train_range``; test windows whose targets fill ``test_range``.

    Test windows may reach back into earlier hours for their inputs.
    """
    train = build_dataset(series, net, wc, train_range)
    t_start, t_end = _hour_range(test_range)
    back = np.timedelta64(int(wc.lookback) + int(wc.horizon) - 1, "h")
    test = build_dataset(series, net, wc, (t_start - back, t_end), train.x_norm, train.y_norm)
    return train, test


@dataclass
class TrainedModel:
    params: lstm.LstmParams
    x_norm: lstm.Normalizer
    y_norm: lstm.Normalizer
    feature_segments: list[int]
    wc: WindowConfig
    curve: lstm.TrainCurve | None = None

    def predict_windows(self, X) -> np.ndarray:
        z = lstm.predict(self.params, X)[:, 0]
        return np.maximum(0.0, self.y_norm.denormalize(z))

    def save(self, path):
        lstm.save_checkpoint(path, self.params, self.x_norm, self.y_norm,
                             meta={"feature_segments": self.feature_segments, "wc": self.wc.to_dict()})

    @classmethod
    def load(cls, path) -> "TrainedModel":
        params, xn, yn, meta = lstm.load_checkpoint(path)
        wcd = dict(meta["wc"])
        return cls(params, xn, yn, list(meta["feature_segments"]), WindowConfig(**wcd))


def train_member(train_ds: WindowedDataset, hp: lstm.HyperParams, seed: int) -> TrainedModel:
    params, curve = lstm.train(train_ds.X, train_ds.y, hp, seed,
                               target_scale=float(train_ds.y_norm.std[0]))
    return TrainedModel(params, train_ds.x_norm, train_ds.y_norm, train_ds.feature_segments,
                        train_ds.wc, curve)


def predict(model: TrainedModel, series: dict[int, HourlySeries], wc: WindowConfig, t) -> float:
    """Flux estimate for hour ``t - 1 + H`` from the window ``[t - L, t)``."""
    t = np.datetime64(t, "h")
    L = int(wc.lookback)
    start = t - np.timedelta64(L, "h")
    try:
        M, _ = _matrix(series, model.feature_segments, start, t)
    except RangeError as exc:
        raise RangeError(f"insufficient history before {t}: {exc}") from None
    X = model.x_norm.normalize(M)[None]
    return float(model.predict_windows(X)[0])


@dataclass
class ForecastRun:
    wc: WindowConfig
    hp: lstm.HyperParams
    ensemble_size: int
    base_seed: int
    times: np.ndarray
    truth: np.ndarray
    members: np.ndarray  # (ensemble_size, n_test)
    models: list[TrainedModel] = field(default_factory=list, repr=False)
    report: object = None

    def _reduced(self):
        # sort per hour so the reduction ignores member order, and work with
        # deviations from the smallest member so identical members give
        # exactly their common value and a zero spread
        s = np.sort(self.members, axis=0)
        d = s - s[0]
        md = d.mean(axis=0)
        return s[0] + md, np.sqrt(((d - md) ** 2).mean(axis=0))

    @property
    def mean(self) -> np.ndarray:
        return self._reduced()[0]

    @property
    def std(self) -> np.ndarray:
        """Population standard deviation across members."""
        return self._reduced()[1]

    def to_dict(self) -> dict:
        mean, std = self.mean, self.std
        hours = [
            {"timestamp": str(t) + ":00:00Z", "truth": float(y), "mean": float(m), "std": float(s),
             "members": [float(v) for v in self.members[:, k]]}
            for k, (t, y, m, s) in enumerate(zip(self.times, self.truth, mean, std))
        ]
        out = {
            "config": {"window": self.wc.to_dict(), "hyperparams": asdict(self.hp),
                       "ensemble_size": self.ensemble_size, "base_seed": self.base_seed},
            "hours": hours,
        }
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def save_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "truth", "mean", "std"])
            for t, y, m, s in zip(self.times, self.truth, self.mean, self.std):
                w.writerow([str(t) + ":00:00Z", repr(float(y)), repr(float(m)), repr(float(s))])


def _train_member_job(args):
    train_ds, hp, seed, k = args
    try:
        return train_member(train_ds, hp, seed)
    except NumericalError as exc:
        exc.diagnostics["member"] = k
        raise


def run_ensemble(train_ds: WindowedDataset, test_ds: WindowedDataset, hp: lstm.HyperParams,
                 ensemble_size: int = 10, base_seed: int = 0, jobs: int = 1,
                 seeds: list[int] | None = None) -> ForecastRun:
    """Train ``ensemble_size`` members (seeds ``base_seed + k``) and predict the test windows."""
    if ensemble_size < 1:
        raise ConfigError("ensemble_size must be >= 1")
    seeds = list(seeds) if seeds is not None else [base_seed + k for k in range(ensemble_size)]
    if len(seeds) != ensemble_size:
        raise ConfigError("need one seed per ensemble member")
    jobs_args = [(train_ds, hp, s, k) for k, s in enumerate(seeds)]
    if jobs > 1 and ensemble_size > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(_train_member_job, jobs_args))
    else:
        models = [_train_member_job(a) for a in jobs_args]
    for k, m in enumerate(models):
        log.info("member=%d seed=%d final_train_rmse=%.3f", k, seeds[k], m.curve.train_rmse[-1])
    members = np.stack([m.predict_windows(test_ds.X) for m in models])
    return ForecastRun(train_ds.wc, hp, ensemble_size, base_seed, test_ds.target_times,
                       test_ds.y_raw.copy(), members, models)


def shift_diagnostic(predictions, truth, max_lag: int = 3) -> int:
    """Integer lag in ``[-max_lag, max_lag]`` maximising corr(pred[t], truth[t - lag]).

    A positive lag means the predictions trail the truth.
    """
    p = np.asarray(predictions, float)
    y = np.asarray(truth, float)
    if p.shape != y.shape:
        raise ConfigError("predictions and truth must be aligned")
    if p.size < 24:
        raise InsufficientDataError("need at least 24 hours for the shift diagnostic")
    best, best_c = 0, -np.inf
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        if lag >= 0:
            a, b = p[lag:], y[:y.size - lag]
        else:
            a, b = p[:lag], y[-lag:]
        if a.std() == 0 or b.std() == 0:
            c = -np.inf
        else:
            c = float(np.corrcoef(a, b)[0, 1])
        if c > best_c + 1e-12:
            best, best_c = lag, c
    return best
