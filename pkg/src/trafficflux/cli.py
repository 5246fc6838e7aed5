"""Command-line entry point: generate -> ingest -> analyze -> train -> forecast -> evaluate."""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analytics, config as config_mod, evaluation, forecast, ingest, synth
from .errors import ConfigError, MissingArtifactError, TrafficFluxError
from .network import Network, build_synthetic_network

log = logging.getLogger("trafficflux")

STAGES = ("generate", "ingest", "analyze", "train", "forecast", "evaluate")
STAGE_ALIASES = {"analytics": "analyze", "grid": "evaluate"}

RAW_CSV = "raw_records.csv"
NETWORK_JSON = "network.json"
HOURLY_CSV = "hourly.csv"
INGEST_REPORT = "ingest_report.json"
MANIFEST = "manifest.json"


class KeyValueFormatter(logging.Formatter):
    def format(self, record):
        return f"{record.levelname} logger={record.name} {record.getMessage()}"


def setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    """Output directory plus the manifest recording every artifact's checksum."""

    def __init__(self, cfg: config_mod.RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.root}: {exc}") from exc
        self.manifest_path = self.root / MANIFEST
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {"artifacts": {}}
        self.manifest["config"] = cfg.to_dict()
        self.manifest["seed"] = cfg.seed

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(f"missing artifact: {p}")
        return p

    def record(self, *paths: Path):
        for p in paths:
            self.manifest["artifacts"][str(p.relative_to(self.root))] = sha256_of(p)
        self.save_manifest()

    def save_manifest(self):
        self.manifest["artifacts"] = dict(sorted(self.manifest["artifacts"].items()))
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True))

    def network(self) -> Network:
        return Network.load(self.require(NETWORK_JSON))

    def series(self):
        return ingest.read_hourly_csv(self.require(HOURLY_CSV))


def cmd_generate(ws: Workspace):
    cfg = ws.cfg
    net = build_synthetic_network(cfg.network, cfg.network_seed())
    scfg = cfg.synth_config()
    data = synth.generate_block(net, synth.WeeklyProfile.default(), scfg)
    net.save(ws.path(NETWORK_JSON))
    n = synth.write_records_csv(data, ws.path(RAW_CSV))
    log.info("stage=generate segments=%d sensorized=%d records=%d outliers=%d",
             len(net), len(net.sensorized_ids), n, int(data.outliers.sum()))
    ws.record(ws.path(NETWORK_JSON), ws.path(RAW_CSV))


def cmd_ingest(ws: Workspace):
    net = ws.network()
    raw = ws.require(RAW_CSV)
    scfg = ws.cfg.synth_config()
    report = ingest.IngestReport()
    series = ingest.build_series(ingest.read_records_csv(raw, report), net,
                                 (scfg.start_date, scfg.end_date), ws.cfg.ingest, report)
    ingest.write_hourly_csv(series, ws.path(HOURLY_CSV))
    report.save(ws.path(INGEST_REPORT))
    log.info("stage=ingest rows_read=%d rows_rejected=%d outliers_removed=%d hours_imputed=%d",
             report.rows_read, report.rows_rejected, report.outliers_removed, report.hours_imputed)
    ws.record(ws.path(HOURLY_CSV), ws.path(INGEST_REPORT))


def _first_monday(d: dt.date) -> dt.date:
    return d + dt.timedelta(days=(7 - d.weekday()) % 7)


def cmd_analyze(ws: Workspace):
    cfg = ws.cfg
    net = ws.network()
    series = ws.series()
    scfg = cfg.synth_config()
    a = cfg.analytics
    week = (dt.date.fromisoformat(a.week_start) if a.week_start else _first_monday(scfg.start_date))
    day = dt.date.fromisoformat(a.day) if a.day else week
    out = ws.path("analytics")
    out.mkdir(exist_ok=True)
    written = []
    if week + dt.timedelta(days=6) <= scfg.end_date:
        written.append(analytics.export_weekly_deviation(analytics.weekly_deviation(series, week), out))
    else:
        log.warning("stage=analyze skipped=weekly_deviation reason=no_full_week")
    busiest = sorted(series, key=lambda s: -net.segment(s).mean_scale)[:6]
    written.append(analytics.export_daily_profiles(
        [analytics.daily_profile(series, s, day) for s in busiest], out, day))
    if net.access_roads:
        written.append(analytics.export_in_out(analytics.in_out_split(series, net, day), out))
    for h in a.snapshot_hours:
        ts = np.datetime64(day, "h") + np.timedelta64(int(h), "h")
        written.append(analytics.export_snapshot(
            analytics.rush_hour_snapshot(series, net, ts, a.clip_value), out))
    for p in list(written):
        written.append(p.with_suffix(".json"))
    log.info("stage=analyze files=%d week_start=%s day=%s", len(written), week, day)
    ws.record(*written)


def _cells(cfg):
    return [evaluation.GridCell(forecast.Coverage(c["coverage"]), c["lookback"], c["horizon"])
            for c in cfg.forecast.grid]


def _target(cfg, net) -> int:
    return cfg.forecast.target if cfg.forecast.target is not None else forecast.default_target(net)


def _cell_dir(ws, wc) -> Path:
    return ws.path("models") / wc.label()


def cmd_train(ws: Workspace):
    cfg = ws.cfg
    net = ws.network()
    series = ws.series()
    target = _target(cfg, net)
    train_r, test_r = cfg.date_ranges()
    written = []
    for cell in _cells(cfg):
        wc = forecast.WindowConfig(cell.lookback, cell.horizon, cell.coverage, target, cfg.forecast.radius_m)
        train_ds, _ = forecast.build_train_test(series, net, wc, train_r, test_r)
        base = cfg.ensemble_seed(wc.label())
        seeds = [base + k for k in range(cfg.forecast.ensemble_size)]
        d = _cell_dir(ws, wc)
        d.mkdir(parents=True, exist_ok=True)
        args = [(train_ds, cfg.hp, s, k) for k, s in enumerate(seeds)]
        if cfg.jobs > 1 and len(args) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                models = list(pool.map(forecast._train_member_job, args))
        else:
            models = [forecast._train_member_job(a) for a in args]
        for k, m in enumerate(models):
            ck = d / f"member_{k}.json"
            m.save(ck)
            cv = d / f"curve_{k}.csv"
            m.curve.to_csv(cv)
            written += [ck, cv]
        log.info("stage=train cell=%s target=%d members=%d final_train_rmse=%.3f",
                 wc.label(), target, len(models), float(np.mean([m.curve.train_rmse[-1] for m in models])))
    ws.record(*written)


def _load_members(ws, wc, n) -> list[forecast.TrainedModel]:
    d = _cell_dir(ws, wc)
    return [forecast.TrainedModel.load(ws.require(str((d / f"member_{k}.json").relative_to(ws.root))))
            for k in range(n)]


def cmd_forecast(ws: Workspace):
    cfg = ws.cfg
    net = ws.network()
    series = ws.series()
    target = _target(cfg, net)
    train_r, test_r = cfg.date_ranges()
    out = ws.path("forecasts")
    out.mkdir(exist_ok=True)
    written = []
    for cell in _cells(cfg):
        wc = forecast.WindowConfig(cell.lookback, cell.horizon, cell.coverage, target, cfg.forecast.radius_m)
        models = _load_members(ws, wc, cfg.forecast.ensemble_size)
        _, test_ds = forecast.build_train_test(series, net, wc, train_r, test_r)
        members = np.stack([m.predict_windows(test_ds.X) for m in models])
        run = forecast.ForecastRun(wc, cfg.hp, len(models), cfg.ensemble_seed(wc.label()),
                                   test_ds.target_times, test_ds.y_raw.copy(), members, models)
        evaluation.evaluate_run(run, series)
        pj, pc = out / f"forecast_{wc.label()}.json", out / f"forecast_{wc.label()}.csv"
        run.save_json(pj)
        run.save_csv(pc)
        written += [pj, pc]
        log.info("stage=forecast cell=%s rmse=%.3f", wc.label(), run.report.global_rmse)
    ws.record(*written)


def cmd_evaluate(ws: Workspace):
    cfg = ws.cfg
    net = ws.network()
    series = ws.series()
    target = _target(cfg, net)
    runs = {}
    for cell in _cells(cfg):
        wc = forecast.WindowConfig(cell.lookback, cell.horizon, cell.coverage, target, cfg.forecast.radius_m)
        doc = json.loads(ws.require(f"forecasts/forecast_{wc.label()}.json").read_text())
        hours = doc["hours"]
        times = np.array([h["timestamp"].rstrip("Z")[:13] for h in hours], dtype="datetime64[h]")
        members = np.array([h["members"] for h in hours]).T
        truth = np.array([h["truth"] for h in hours])
        run = forecast.ForecastRun(wc, cfg.hp, members.shape[0], doc["config"]["base_seed"],
                                   times, truth, members)
        evaluation.evaluate_run(run, series)
        runs[cell.key()] = run
    table, summary = ws.path("grid_table.csv"), ws.path("grid_summary.json")
    evaluation.write_grid_table(runs, table)
    evaluation.write_grid_summary(runs, summary)
    report = ws.path("report.json")
    report.write_text(json.dumps({
        "target": target,
        "train_range": [str(d) for d in cfg.date_ranges()[0]],
        "test_range": [str(d) for d in cfg.date_ranges()[1]],
        "grid": evaluation.grid_summary(runs),
    }, indent=1))
    for key, run in sorted(runs.items()):
        log.info("stage=evaluate cell=%s_L%d_H%d rmse=%.3f rel_error=%.4f persistence=%.3f", *key,
                 run.report.global_rmse, run.report.relative_error, run.report.baseline_rmse["persistence"])
    ws.record(table, summary, report)


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
}


def cmd_pipeline(ws: Workspace, stop: str | None = None):
    stop = STAGE_ALIASES.get(stop, stop) if stop else STAGES[-1]
    if stop not in STAGES:
        raise ConfigError(f"--stage: unknown stage {stop!r}")
    for name in STAGES[: STAGES.index(stop) + 1]:
        run_stage(ws, name)


def run_stage(ws: Workspace, name: str):
    log.info("stage=%s status=start", name)
    try:
        COMMANDS[name](ws)
    except Exception as exc:
        log.error("stage=%s status=failed error=%s", name, str(exc).replace("\n", " "))
        raise
    log.info("stage=%s status=done", name)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="dotted-path override, value parsed as JSON; repeatable")
    common.add_argument("--jobs", type=int, help="worker processes for ensemble training")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trafficflux", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    p = sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    p.add_argument("--stage", help="stop after this stage")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        overrides = list(args.set)
        if args.jobs is not None:
            overrides.append(f"jobs={args.jobs}")
        cfg = config_mod.load(args.config, overrides, seed=args.seed, out=args.out)
        ws = Workspace(cfg)
        if args.command == "pipeline":
            cmd_pipeline(ws, args.stage)
        else:
            run_stage(ws, args.command)
    except MissingArtifactError as exc:
        log.error("error=missing_artifact message=%s", exc)
        return 2
    except TrafficFluxError as exc:
        log.error("error=%s message=%s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("error=io message=%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
