import json
import time
from pathlib import Path

import pytest

from trafficflux import cli
from trafficflux.config import RunConfig, apply_overrides, from_dict, load
from trafficflux.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.json"


def run(*args):
    return cli.main([str(a) for a in args])


def manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def test_default_config_valid():
    cfg = from_dict({})
    assert isinstance(cfg, RunConfig)
    assert cfg.network.n_segments == 50 and cfg.forecast.ensemble_size == 10
    assert len(cfg.forecast.grid) == 12
    train, test = cfg.date_ranges()
    assert (test[1] - test[0]).days == 6 and test[0].weekday() == 3  # Thursday to Wednesday


@pytest.mark.parametrize("raw, field", [
    ({"network": {"sensorized_fraction": 1.5}}, "network.sensorized_fraction"),
    ({"network": {"n_segments": "many"}}, "network.n_segments"),
    ({"network": {"bogus": 1}}, "network.bogus"),
    ({"nonsense": {}}, "nonsense"),
    ({"synth": {"start_date": "yesterday"}}, "synth.start_date"),
    ({"hp": {"epochs": 0}}, "hp.epochs"),
    ({"forecast": {"grid": [{"coverage": "everything", "lookback": 5, "horizon": 1}]}}, "forecast.grid[0].coverage"),
    ({"forecast": {"test_start": "2030-01-01", "test_end": "2030-01-07"}}, "forecast.test"),
])
def test_schema_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        from_dict(raw)


def test_overrides():
    raw = apply_overrides({"hp": {"epochs": 5}}, ["hp.epochs=7", "network.side_m=1500", "output_dir=x y"])
    assert raw == {"hp": {"epochs": 7}, "network": {"side_m": 1500}, "output_dir": "x y"}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_seeds_are_named_and_stable():
    a, b = from_dict({"seed": 1}), from_dict({"seed": 2})
    assert a.network_seed() != a.synth_config().seed
    assert a.network_seed() == from_dict({"seed": 1}).network_seed()
    assert a.network_seed() != b.network_seed()
    assert a.ensemble_seed("all_L5_H1") != a.ensemble_seed("all_L5_H2")


def test_load_with_flags(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "hp": {"epochs": 9}}))
    cfg = load(p, ["hp.epochs=4"], seed=5, out="elsewhere")
    assert (cfg.seed, cfg.hp.epochs, cfg.output_dir) == (5, 4, "elsewhere")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load(p)


def test_generate_default_and_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--out", a) == 0
    assert run("generate", "--out", b) == 0
    ma, mb = manifest(a), manifest(b)
    assert sorted(ma["artifacts"]) == ["network.json", "raw_records.csv"]
    assert ma["artifacts"] == mb["artifacts"]
    assert ma["config"]["output_dir"] == str(a) and ma["seed"] == 0
    assert run("generate", "--out", tmp_path / "c", "--seed", 1) == 0
    assert manifest(tmp_path / "c")["artifacts"] != ma["artifacts"]


def test_invalid_fraction_exit_code(tmp_path, capsys):
    assert run("generate", "--out", tmp_path, "--set", "network.sensorized_fraction=1.5") == 1
    err = capsys.readouterr().err
    assert err.startswith("ERROR ") and "network.sensorized_fraction" in err


def test_missing_artifact(tmp_path, capsys):
    assert run("train", "--config", SMOKE, "--out", tmp_path) == 2
    assert "missing artifact" in capsys.readouterr().err


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("generate", "--config", SMOKE, "--out", blocker / "sub") == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from trafficflux.errors import NumericalError

    def boom(ws):
        raise NumericalError("non-finite loss", epoch=0)

    monkeypatch.setitem(cli.COMMANDS, "generate", boom)
    assert run("generate", "--config", SMOKE, "--out", tmp_path) == 3


def test_stage_gating(tmp_path):
    assert run("pipeline", "--config", SMOKE, "--out", tmp_path, "--stage", "analytics") == 0
    names = set(manifest(tmp_path)["artifacts"])
    assert {"network.json", "raw_records.csv", "hourly.csv", "ingest_report.json"} <= names
    assert any(n.startswith("analytics/") for n in names)
    assert not any(n.startswith(("models/", "forecasts/")) for n in names)
    assert not (tmp_path / "report.json").exists()


def test_unknown_stage(tmp_path):
    assert run("pipeline", "--config", SMOKE, "--out", tmp_path, "--stage", "deploy") == 1


def test_log_lines_are_key_value(tmp_path, capsys):
    run("generate", "--config", SMOKE, "--out", tmp_path)
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines
    for line in lines:
        level, *pairs = line.split(" ")
        assert level in {"DEBUG", "INFO", "WARNING", "ERROR"}
        assert all("=" in p for p in pairs[:2])


def test_smoke_pipeline_under_a_minute(tmp_path):
    t = time.perf_counter()
    assert run("pipeline", "--config", SMOKE, "--out", tmp_path, "--jobs", 1) == 0
    elapsed = time.perf_counter() - t
    assert elapsed < 60
    m = manifest(tmp_path)
    for name, digest in m["artifacts"].items():
        assert (tmp_path / name).exists(), name
        assert len(digest) == 64
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["grid"]) == 12
    assert len(list((tmp_path / "forecasts").glob("*.csv"))) == 12


def test_resume_stages_individually(tmp_path):
    for stage in ("generate", "ingest", "analyze"):
        assert run(stage, "--config", SMOKE, "--out", tmp_path) == 0
    hourly = manifest(tmp_path)["artifacts"]["hourly.csv"]
    other = tmp_path / "again"
    assert run("pipeline", "--config", SMOKE, "--out", other, "--stage", "ingest") == 0
    assert manifest(other)["artifacts"]["hourly.csv"] == hourly
