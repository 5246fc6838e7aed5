import csv
import dataclasses
import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficflux.analytics import (
    daily_profile,
    export_daily_profiles,
    export_in_out,
    export_snapshot,
    export_weekly_deviation,
    in_out_split,
    local_maxima,
    rush_hour_snapshot,
    weekly_deviation,
)
from trafficflux.errors import ConfigError, RangeError, SegmentLookupError
from trafficflux.ingest import HourlySeries, Quality, build_series_from_synth
from trafficflux.network import Direction, Network
from trafficflux.synth import SynthConfig, WeeklyProfile, generate_block

MONDAY = dt.date(2016, 1, 4)


@pytest.fixture(scope="module")
def default_series(default_net):
    cfg = SynthConfig(start_date=MONDAY, end_date=dt.date(2016, 1, 17))
    return build_series_from_synth(generate_block(default_net, WeeklyProfile.default(), cfg))


@pytest.fixture(scope="module")
def noiseless_series(noiseless_data):
    return build_series_from_synth(noiseless_data)


def constant_series(ids, value=100.0, hours=336):
    return {i: HourlySeries(i, np.datetime64(MONDAY, "h"), np.full(hours, value), np.zeros(hours)) for i in ids}


def swap_tags(net):
    flip = {Direction.INCOMING: Direction.OUTGOING, Direction.OUTGOING: Direction.INCOMING,
            Direction.INTERNAL: Direction.INTERNAL}
    segs = tuple(dataclasses.replace(s, direction=flip[s.direction]) for s in net.segments)
    return Network(segs, {k: v[::-1] for k, v in net.access_roads.items()})


def test_local_maxima():
    assert local_maxima([0, 2, 1, 3, 3, 1, 5]) == [1]
    assert local_maxima([1, 2]) == []


def test_constant_flux_gives_unit_deviation():
    wd = weekly_deviation(constant_series([1, 2, 3]), MONDAY)
    np.testing.assert_array_equal(wd.sigma_h, np.ones(168))


def test_weekly_deviation_mean_one(default_series):
    wd = weekly_deviation(default_series, MONDAY)
    assert abs(wd.sigma_h.mean() - 1.0) < 1e-9


def test_weekly_deviation_peaks(default_series):
    wd = weekly_deviation(default_series, MONDAY)
    for d in range(5):
        peaks = local_maxima(wd.day(d))
        assert len(peaks) == 3
        assert all(abs(p - t) <= 1 for p, t in zip(peaks, (8, 14, 19)))
    for d in (5, 6):
        assert len(local_maxima(wd.day(d))) == 2


def test_weekly_deviation_partition_identity(default_series):
    wd = weekly_deviation(default_series, MONDAY)
    total = math.fsum(float(s.values[:168].sum()) for s in default_series.values())
    assert math.isclose(wd.totals.sum(), total, rel_tol=1e-12)


@settings(max_examples=20, deadline=None)
@given(k=st.sampled_from([0.5, 2.0, 4.0, 0.125]))
def test_weekly_deviation_scale_invariant(default_series, k):
    a = weekly_deviation(default_series, MONDAY)
    b = weekly_deviation({i: s.scaled(k) for i, s in default_series.items()}, MONDAY)
    np.testing.assert_array_equal(a.sigma_h, b.sigma_h)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(0.01, 100.0))
def test_weekly_deviation_scale_invariant_any_k(default_series, k):
    a = weekly_deviation(default_series, MONDAY)
    b = weekly_deviation({i: s.scaled(k) for i, s in default_series.items()}, MONDAY)
    np.testing.assert_allclose(a.sigma_h, b.sigma_h, rtol=1e-12)


def test_weekly_deviation_errors(default_series):
    with pytest.raises(ConfigError):
        weekly_deviation(default_series, dt.date(2016, 1, 5))
    with pytest.raises(RangeError):
        weekly_deviation(default_series, dt.date(2016, 1, 11) + dt.timedelta(days=7))
    with pytest.raises(RangeError):
        weekly_deviation(default_series, dt.date(2015, 12, 28))


def test_daily_profile_access_peak_at_8(small_net, noiseless_series):
    assert small_net.access_roads
    for seg_in, seg_out in small_net.access_roads.values():
        inc = daily_profile(noiseless_series, seg_in, MONDAY).values
        out = daily_profile(noiseless_series, seg_out, MONDAY).values
        assert int(np.argmax(inc)) == 8
        assert int(np.argmax(inc + out)) == 8
        # the outbound half carries the evening return flow
        assert int(np.argmax(out)) == 19


def test_daily_profile_carries_quality(default_series):
    sid = next(iter(default_series))
    s = default_series[sid]
    q = s.quality.copy()
    q[5] = Quality.IMPUTED
    patched = {sid: HourlySeries(sid, s.t0, s.values, q)}
    p = daily_profile(patched, sid, MONDAY)
    assert p.quality[5] == Quality.IMPUTED
    assert p.values[5] == s.values[5]


def test_daily_profile_partition(default_series):
    for sid, s in default_series.items():
        days = [daily_profile(default_series, sid, MONDAY + dt.timedelta(days=d)).values for d in range(7)]
        assert math.isclose(math.fsum(np.concatenate(days)), math.fsum(s.values[:168]), rel_tol=1e-12)


def test_daily_profile_unknown_segment(default_series):
    with pytest.raises(SegmentLookupError):
        daily_profile(default_series, 10_000, MONDAY)


def test_in_out_only_internal(default_net, default_series):
    internal = {i: s for i, s in default_series.items()
                if default_net.segment(i).direction is Direction.INTERNAL}
    split = in_out_split(internal, default_net, MONDAY)
    assert not split.incoming.any() and not split.outgoing.any() and not split.net.any()


def test_in_out_balance_default_monday(default_net, default_series):
    split = in_out_split(default_series, default_net, MONDAY)
    assert split.balance_ratio() < 0.02
    np.testing.assert_array_equal(split.net, split.incoming - split.outgoing)


def test_in_out_antisymmetry(default_net, default_series):
    a = in_out_split(default_series, default_net, MONDAY)
    b = in_out_split(default_series, swap_tags(default_net), MONDAY)
    np.testing.assert_array_equal(a.incoming, b.outgoing)
    np.testing.assert_array_equal(a.outgoing, b.incoming)
    np.testing.assert_array_equal(a.net, -b.net)


def test_in_out_requires_access_roads(default_net, default_series):
    bare = Network(tuple(dataclasses.replace(s, direction=Direction.INTERNAL) for s in default_net.segments))
    with pytest.raises(ConfigError):
        in_out_split(default_series, bare, MONDAY)


def test_snapshot_contains_sensorized(default_net, default_series):
    snap = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08"))
    assert sorted(snap.flux_by_segment) == list(default_net.sensorized_ids)


def test_snapshot_infinite_clip(default_net, default_series):
    snap = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08"), clip_value=math.inf)
    assert snap.exported() == snap.flux_by_segment


def test_snapshot_default_clip(default_net, default_series):
    snap = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08"))
    assert snap.clip_value == 2000
    assert max(snap.exported().values()) <= 2000
    assert max(snap.flux_by_segment.values()) > 2000


def test_snapshot_access_roads_in_top5(default_net, default_series):
    snap = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08"))
    top = snap.top(5)
    for seg_in, seg_out in default_net.access_roads.values():
        assert seg_in in top or seg_out in top


def test_snapshot_night_below_morning(default_net, default_series):
    night = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T03"))
    morning = rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08"))
    assert night.total() < morning.total()


def test_snapshot_out_of_range(default_net, default_series):
    with pytest.raises(RangeError):
        rush_hour_snapshot(default_series, default_net, np.datetime64("2017-06-01T08"))


def test_exports(tmp_path, default_net, default_series):
    paths = [
        export_weekly_deviation(weekly_deviation(default_series, MONDAY), tmp_path),
        export_daily_profiles([daily_profile(default_series, i, MONDAY) for i in default_series], tmp_path, MONDAY),
        export_in_out(in_out_split(default_series, default_net, MONDAY), tmp_path),
        export_snapshot(rush_hour_snapshot(default_series, default_net, np.datetime64("2016-01-04T08")), tmp_path),
    ]
    for p in paths:
        assert p.name.startswith("analytics_") and p.suffix == ".csv"
        rows = list(csv.reader(p.open()))
        assert rows[0] == ["key", "hour", "value"]
        assert len(rows) > 1
        json.loads(p.with_suffix(".json").read_text())
    wd_rows = list(csv.reader(paths[0].open()))[1:]
    assert len(wd_rows) == 168
