"""Unit tests for segment construction, covariate joins, and diagnostics."""

import numpy as np
import pandas as pd
import pytest

from navrisk import ingest, risk
from navrisk.synth import make_raw_sample
from navrisk.validation import ConfigError, DataError, check_observations

T0 = pd.Timestamp("2020-01-01T00:00:00Z")


def _rec(mmsi, cell, day, t, lat, lon, **extra):
    row = {
        "mmsi": mmsi, "cell_id": cell, "time_id": day, "timestamp": t.isoformat(),
        "lat": lat, "lon": lon, "ice": 2.0, "mu": 8.0,
    }
    row.update(extra)
    return row


def test_haversine_identities():
    rng = np.random.default_rng(1)
    lat = rng.uniform(-80, 80, 200)
    lon = rng.uniform(-180, 180, 200)
    lat2 = rng.uniform(-80, 80, 200)
    lon2 = rng.uniform(-180, 180, 200)
    d_ab = ingest.haversine(lat, lon, lat2, lon2)
    d_ba = ingest.haversine(lat2, lon2, lat, lon)
    assert np.allclose(d_ab, d_ba, atol=1e-12)
    assert np.allclose(ingest.haversine(lat, lon, lat, lon), 0.0, atol=1e-9)
    # triangle inequality on random triples
    lat3 = rng.uniform(-80, 80, 200)
    lon3 = rng.uniform(-180, 180, 200)
    d_ac = ingest.haversine(lat, lon, lat3, lon3)
    d_bc = ingest.haversine(lat2, lon2, lat3, lon3)
    assert np.all(d_ac <= d_ab + d_bc + 1e-9)


def test_haversine_rejects_bad_coordinates():
    with pytest.raises(DataError):
        ingest.haversine(91.0, 0.0, 0.0, 0.0)
    with pytest.raises(DataError):
        ingest.haversine(0.0, 181.0, 0.0, 0.0)


def test_build_segments_thresholds_and_cap():
    rows = [
        _rec(1, "A", 0, T0, 70.0, -60.0),
        # 30 s later: dt = 0.00833 h < 0.01 -> stationary despite 1.1 km moved
        _rec(1, "A", 0, T0 + pd.Timedelta(seconds=30), 70.01, -60.0),
        # duplicate timestamp: dropped, not an error
        _rec(1, "A", 0, T0 + pd.Timedelta(seconds=30), 70.01, -60.0),
        # 1 h later, 5.6 m moved: below the 50 m displacement floor
        _rec(1, "A", 0, T0 + pd.Timedelta(seconds=3630), 70.01005, -60.0),
        # 0.5 h later, 44.5 km moved: 48 knots derived, capped at 40
        _rec(1, "A", 0, T0 + pd.Timedelta(seconds=5430), 70.41005, -60.0),
        # 1 h later, 11.1 km moved: ordinary 6-knot segment
        _rec(1, "A", 0, T0 + pd.Timedelta(seconds=9030), 70.51005, -60.0),
        # different day: linkage must not cross the time_id boundary
        _rec(1, "A", 1, T0 + pd.Timedelta(days=1), 71.0, -60.0),
        _rec(2, "A", 0, T0, 70.0, -61.0),
    ]
    stats = ingest.PrepareStats()
    seg = ingest.build_segments(pd.DataFrame(rows), stats=stats)
    assert stats.n_records == 8
    assert stats.n_dropped_nonpositive_dt == 1
    assert len(seg) == 4
    v = seg["v_obs"].to_numpy()
    assert v[0] == 0.0 and v[1] == 0.0
    assert v[2] == 40.0
    assert v[3] == pytest.approx(6.004, abs=1e-3)
    assert (seg["dt_hours"] > 0).all()
    assert (seg["trajectory_id"] == "1:A:0").all()


def test_build_segments_rejects_unsorted_prepare_sorts():
    rows = [
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=2), 70.2, -60.0),
        _rec(1, "A", 0, T0, 70.0, -60.0),
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=1), 70.1, -60.0),
    ]
    records = pd.DataFrame(rows)
    with pytest.raises(DataError, match="sorted"):
        ingest.build_segments(records)
    grid = pd.DataFrame({"lat": [70.0], "lon": [-60.0], "intensity": [1.0]})
    obs, stats = ingest.prepare_observations(records, grid)
    assert stats.n_segments == 2


def test_build_segments_missing_columns():
    with pytest.raises(DataError, match="missing required columns"):
        ingest.build_segments(pd.DataFrame({"mmsi": [1]}))
    rows = [_rec(1, "A", 0, T0, 70.0, -60.0)]
    with pytest.raises(DataError, match="baseline column"):
        ingest.build_segments(pd.DataFrame(rows).drop(columns=["mu"]))


def test_sog_rules():
    rows = [
        _rec(1, "A", 0, T0, 70.0, -60.0, sog=3.0),
        # valid SOG wins over the derived speed
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=1), 70.1, -60.0, sog=12.3),
        # valid SOG also wins over the stationary thresholds (30 s segment)
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=1, seconds=30), 70.1, -60.0, sog=5.0),
        # invalid SOGs fall back to the derived speed (~6 knots per hour-leg)
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=2), 70.2, -60.0, sog=-1.0),
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=3), 70.3, -60.0, sog=102.3),
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=4), 70.4, -60.0, sog=None),
        # sentinel boundary 102.2 is still "valid" and then capped at 40
        _rec(1, "A", 0, T0 + pd.Timedelta(hours=5), 70.5, -60.0, sog=102.2),
    ]
    seg = ingest.build_segments(pd.DataFrame(rows))
    v = seg["v_obs"].to_numpy()
    assert v[0] == 12.3
    assert v[1] == 5.0
    assert np.allclose(v[2:5], 6.0, atol=0.1)
    assert v[5] == 40.0


def test_nearest_intensity_brute_force_oracle():
    rng = np.random.default_rng(2)
    grid = pd.DataFrame({
        "lat": rng.uniform(69, 76, 15),
        "lon": rng.uniform(-66, -54, 15),
        "intensity": rng.lognormal(0, 1, 15),
    })
    obs_lat = rng.uniform(69, 76, 40)
    obs_lon = rng.uniform(-66, -54, 40)
    got = ingest._nearest_intensity(obs_lat, obs_lon, np.full(40, 7), grid)
    want = np.empty(40)
    for i in range(40):
        d = [ingest.haversine(obs_lat[i], obs_lon[i], grid["lat"][j], grid["lon"][j])
             for j in range(len(grid))]
        want[i] = grid["intensity"][int(np.argmin(d))]
    assert np.array_equal(got, want)


def test_nearest_intensity_tie_breaks_to_lower_index():
    grid = pd.DataFrame({
        "lat": [70.0, 70.0], "lon": [-60.0, -59.0], "intensity": [1.25, 2.5],
    })
    got = ingest._nearest_intensity(np.array([70.0]), np.array([-59.5]),
                                    np.array([7]), grid)
    assert got[0] == 1.25


def test_nearest_intensity_time_keyed():
    grid = pd.DataFrame({
        "lat": [70.0, 70.0], "lon": [-60.0, -60.0],
        "intensity": [1.0, 9.0], "time_key": [7, 8],
    })
    months = np.array([7, 8, 9])
    got = ingest._nearest_intensity(np.full(3, 70.0), np.full(3, -60.0), months, grid)
    assert got[0] == 1.0
    assert got[1] == 9.0
    assert np.isnan(got[2])


def test_nearest_intensity_rejects_bad_grid():
    with pytest.raises(ConfigError, match="empty"):
        ingest._nearest_intensity(np.array([70.0]), np.array([-60.0]), np.array([7]),
                                  pd.DataFrame({"lat": [], "lon": [], "intensity": []}))
    with pytest.raises(ConfigError, match="missing column"):
        ingest._nearest_intensity(np.array([70.0]), np.array([-60.0]), np.array([7]),
                                  pd.DataFrame({"lat": [70.0], "lon": [-60.0]}))
    with pytest.raises(ConfigError, match="nonnegative"):
        ingest._nearest_intensity(np.array([70.0]), np.array([-60.0]), np.array([7]),
                                  pd.DataFrame({"lat": [70.0], "lon": [-60.0],
                                                "intensity": [-1.0]}))


def _segments_frame(**overrides):
    base = {
        "lat": [70.0, 70.1, 70.2, 70.3],
        "lon": [-60.0, -60.0, -60.0, -60.0],
        "month": [7, 7, 7, 7],
        "v_obs": [0.0, 10.0, 12.0, 8.0],
        "mu": [4.2, 9.0, 11.0, 7.5],
        "ice": [2.0, 3.0, 0.5, 1.0],
        "dt_hours": [0.1, 0.1, 0.1, 0.1],
        "trajectory_id": ["t"] * 4,
    }
    base.update(overrides)
    return pd.DataFrame(base)


def test_assign_covariates_zero_speed_baseline_rule():
    grid = pd.DataFrame({"lat": [70.0], "lon": [-60.0], "intensity": [0.7]})
    out = ingest.assign_covariates(_segments_frame(), grid)
    assert out["mu"].iloc[0] == 0.0
    assert np.array_equal(out["mu"].to_numpy()[1:], [9.0, 11.0, 7.5])
    assert (out["whale"] == 0.7).all()
    # safe-speed column is wired straight through the threshold curve
    assert np.array_equal(out["v_safe"].to_numpy(),
                          risk.v_safe(out["ice_tenths"].to_numpy()))
    assert out["v_safe"].iloc[0] == pytest.approx(13.4)


def test_assign_covariates_ice_fraction_conversion():
    grid = pd.DataFrame({"lat": [70.0], "lon": [-60.0], "intensity": [0.7]})
    seg = _segments_frame(ice=[0.5, 0.8, 0.2, 1.2])
    stats = ingest.PrepareStats()
    out = ingest.assign_covariates(seg, grid, ice_unit="fraction", stats=stats)
    # 1.2 converts to 12 tenths, out of range, excluded
    assert stats.n_excluded_covariates == 1
    assert np.allclose(out["ice_tenths"].to_numpy(), [5.0, 8.0, 2.0], rtol=1e-12)
    with pytest.raises(ConfigError, match="ice_unit"):
        ingest.assign_covariates(seg, grid, ice_unit="percent")


def test_assign_covariates_exclusion_warning(caplog):
    grid = pd.DataFrame({"lat": [70.0], "lon": [-60.0], "intensity": [0.7]})
    # all speeds positive so the zero-speed rule cannot repair the NaN baselines
    seg = _segments_frame(mu=[np.nan, np.nan, np.nan, 7.5],
                          v_obs=[9.0, 10.0, 12.0, 8.0])
    stats = ingest.PrepareStats()
    with caplog.at_level("WARNING"):
        out = ingest.assign_covariates(seg, grid, stats=stats)
    assert stats.n_excluded_covariates == 3
    assert len(out) == 1
    assert any(">50%" in w for w in stats.warnings)
    assert any("excluded" in r.message for r in caplog.records)


def test_prepare_observations_on_bundled_sample_shape():
    records, grid = make_raw_sample()
    obs, stats = ingest.prepare_observations(records, grid)
    assert stats.n_records == 1008
    assert stats.n_observations == 894
    assert stats.n_observations == len(obs)
    checked = check_observations(obs)
    # stationary rows keep their exposure; whale intensity joined everywhere
    assert (checked["dt"] > 0).all()
    assert (checked["whale"] > 0).all()
    assert (checked.loc[checked["v_obs"] == 0.0, "mu"] == 0.0).all()
    assert list(obs.columns) == [c for c in ingest.OUTPUT_COLUMNS if c in obs.columns]


def test_prepare_observations_row_order_invariant():
    records, grid = make_raw_sample(n_vessels=3, n_days=2, records_per_day=25, seed=9)
    obs_a, _ = ingest.prepare_observations(records, grid)
    obs_b, _ = ingest.prepare_observations(records.sample(frac=1.0, random_state=5), grid)
    pd.testing.assert_frame_equal(obs_a, obs_b)


def test_read_records_column_map(tmp_path):
    raw = pd.DataFrame({
        "VesselID": [1], "Cell": ["A"], "Day": [0],
        "TS": [T0.isoformat()], "LAT": [70.0], "LON": [-60.0],
        "ICE": [2.0], "BASE": [8.0],
    })
    path = tmp_path / "raw.csv"
    raw.to_csv(path, index=False)
    column_map = {"mmsi": "VesselID", "cell_id": "Cell", "time_id": "Day",
                  "timestamp": "TS", "lat": "LAT", "lon": "LON",
                  "ice": "ICE", "mu": "BASE"}
    out = ingest.read_records(path, column_map)
    for col in ingest.RAW_REQUIRED + ["mu"]:
        assert col in out.columns


def test_diagnostics_hand_cases():
    seg = pd.DataFrame({
        "distance_km": [0.010, 0.020, 0.030, 0.040, 0.100],
        "dt_hours": [0.1] * 5,
        "v_obs": [0.0, 1.0, 2.0, 3.0, 4.0],
    })
    report = ingest.diagnostics(seg)
    assert report["fraction_displacement_below_50m"] == pytest.approx(0.8)
    assert report["n_segments"] == 5
    single = ingest.diagnostics(seg.iloc[:1])
    for stat in single["displacement_km"].values():
        assert stat == pytest.approx(0.010)
    assert single["positive_speed_knots"] is None
    assert ingest.diagnostics(seg.iloc[0:0]) == {"n_segments": 0}
