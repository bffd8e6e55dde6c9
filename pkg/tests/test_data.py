import warnings

import numpy as np
import pytest

from airinfer import data, geo
from airinfer.errors import ConfigError, ValidationError


def morans_i(values: np.ndarray, lat: np.ndarray, lon: np.ndarray,
             band_km: float = 100.0) -> float:
    """Independent spatial-autocorrelation statistic, distance-band weights."""
    d = geo.haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    w = (d < band_km).astype(float)
    np.fill_diagonal(w, 0.0)
    z = values - values.mean()
    n = values.size
    return (n / w.sum()) * (z @ w @ z) / (z @ z)


# -- synthetic generation -----------------------------------------------------------


def test_noise_and_plumes_off_gives_region_baselines():
    cfg = data.SynthConfig(n_stations=40, steps=5, plumes=0, noise_sd=0.0,
                           cluster_amp=0.0, seed=3)
    ds = data.generate_synthetic(cfg)
    lat0, lat1, lon0, lon1 = cfg.bbox
    frac = (ds.stations.lon - lon0) / (lon1 - lon0)
    region = np.clip((frac * cfg.regions).astype(int), 0, cfg.regions - 1)
    want = 12.0 + 22.0 * region
    for t in range(cfg.steps):
        assert np.allclose(ds.cont[t, :, 0], want, atol=1e-12)


def test_same_seed_reproducible():
    cfg = data.SynthConfig(n_stations=20, steps=30, seed=11)
    d1 = data.generate_synthetic(cfg)
    d2 = data.generate_synthetic(cfg)
    assert np.array_equal(d1.cont, d2.cont)
    assert np.array_equal(d1.weather, d2.weather)
    assert np.array_equal(d1.wind, d2.wind)
    assert d1.stations.ids == d2.stations.ids


def test_pm25_is_spatially_autocorrelated():
    # default station density; short run since the check is per-snapshot
    cfg = data.SynthConfig(n_stations=256, steps=48, seed=5)
    ds = data.generate_synthetic(cfg)
    scores = [morans_i(ds.cont[t, :, 0], ds.stations.lat, ds.stations.lon)
              for t in range(0, 48, 8)]
    assert np.mean(scores) > 0.3


def test_values_in_sane_ranges():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=30, steps=50, seed=2))
    assert ds.cont[..., 0].min() >= 0.0  # pm25 non-negative
    assert 0.0 <= ds.cont[..., 2].min() and ds.cont[..., 2].max() <= 100.0
    assert set(np.unique(ds.weather)) <= set(range(5))
    assert set(np.unique(ds.wind)) <= set(range(8))


def test_cluster_signal_shared_within_cluster():
    # with plumes and noise off, the residual over the region baseline is the
    # cluster signal itself, so same-cluster stations must match exactly
    # baselines kept high so the pm25 >= 0 clamp never engages
    cfg = data.SynthConfig(n_stations=30, steps=40, plumes=0, noise_sd=0.0,
                           cluster_amp=10.0, seed=9,
                           region_baselines=(60.0, 82.0, 104.0, 126.0))
    ds = data.generate_synthetic(cfg)
    lat0, lat1, lon0, lon1 = cfg.bbox
    frac = (ds.stations.lon - lon0) / (lon1 - lon0)
    region = np.clip((frac * cfg.regions).astype(int), 0, cfg.regions - 1)
    resid = ds.cont[:, :, 0] - np.asarray(cfg.region_baselines)[region][None, :]
    profiles = np.unique(np.round(resid.T, 9), axis=0)
    assert 1 < profiles.shape[0] <= cfg.clusters
    assert resid.std() > 1.0  # the signal actually moves


def test_cluster_knob_only_affects_pm25_offsets():
    base = data.generate_synthetic(data.SynthConfig(n_stations=20, steps=30, seed=11,
                                                    cluster_amp=0.0))
    on = data.generate_synthetic(data.SynthConfig(n_stations=20, steps=30, seed=11))
    assert base.stations.ids == on.stations.ids
    assert np.array_equal(base.cont[..., 1:], on.cont[..., 1:])  # temp/humidity untouched
    assert not np.array_equal(base.cont[..., 0], on.cont[..., 0])


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        data.SynthConfig(n_stations=1)
    with pytest.raises(ConfigError):
        data.SynthConfig(noise_sd=-1.0)
    with pytest.raises(ConfigError):
        data.SynthConfig(cluster_amp=-0.5)
    with pytest.raises(ConfigError):
        data.generate_synthetic(data.SynthConfig(regions=2, region_baselines=(5.0,)))


# -- CSV round trip ------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    cfg = data.SynthConfig(n_stations=8, steps=12, seed=4)
    ds = data.generate_synthetic(cfg)
    data.write_dataset(ds, str(tmp_path), meta=data.synth_meta(cfg))
    back = data.load_csv(str(tmp_path / "stations.csv"), str(tmp_path / "readings.csv"))
    assert back.stations.ids == ds.stations.ids
    assert np.abs(back.stations.lat - ds.stations.lat).max() < 1e-9
    assert np.abs(back.cont - ds.cont).max() < 1e-9
    assert np.array_equal(back.weather, ds.weather)
    assert np.array_equal(back.wind, ds.wind)
    assert (tmp_path / "meta.json").exists()


def test_load_empty_readings_rejected(tmp_path):
    st = tmp_path / "stations.csv"
    st.write_text("id,lat,lon\na,35.0,110.0\nb,35.5,110.5\n")
    rd = tmp_path / "readings.csv"
    rd.write_text("timestamp,station_id,pm25,temp,humidity,weather_code,wind_code\n")
    with pytest.raises(ValidationError, match="no samples"):
        data.load_csv(str(st), str(rd))


def test_load_malformed_row_reports_line_number(tmp_path):
    st = tmp_path / "stations.csv"
    st.write_text("id,lat,lon\na,35.0,110.0\nb,35.5,110.5\n")
    rd = tmp_path / "readings.csv"
    rd.write_text(
        "timestamp,station_id,pm25,temp,humidity,weather_code,wind_code\n"
        "2018-01-01T00:00:00,a,10.0,5.0,50.0,1,2\n"
        "2018-01-01T00:00:00,b,oops,5.0,50.0,1,2\n")
    with pytest.raises(ValidationError, match=":3:"):
        data.load_csv(str(st), str(rd))


def test_load_unknown_station_rejected(tmp_path):
    st = tmp_path / "stations.csv"
    st.write_text("id,lat,lon\na,35.0,110.0\n")
    rd = tmp_path / "readings.csv"
    rd.write_text(
        "timestamp,station_id,pm25,temp,humidity,weather_code,wind_code\n"
        "2018-01-01T00:00:00,zz,10.0,5.0,50.0,1,2\n")
    with pytest.raises(ValidationError, match="unknown station"):
        data.load_csv(str(st), str(rd))


def test_load_imputes_missing_values(tmp_path):
    st = tmp_path / "stations.csv"
    st.write_text("id,lat,lon\na,35.0,110.0\nb,35.5,110.5\n")
    lines = ["timestamp,station_id,pm25,temp,humidity,weather_code,wind_code"]
    for h in range(4):
        pm = "" if h == 2 else str(10.0 + h)
        lines.append(f"2018-01-01T0{h}:00:00,a,{pm},5.0,50.0,1,2")
        lines.append(f"2018-01-01T0{h}:00:00,b,20.0,6.0,55.0,1,2")
    (tmp_path / "readings.csv").write_text("\n".join(lines) + "\n")
    ds = data.load_csv(str(st), str(tmp_path / "readings.csv"))
    assert ds.imputed == 1
    assert np.isfinite(ds.cont).all()
    assert ds.cont[2, 0, 0] == np.median([10.0, 11.0, 13.0])  # station median


def test_load_forward_fills_short_gaps(tmp_path):
    st = tmp_path / "stations.csv"
    st.write_text("id,lat,lon\na,35.0,110.0\nb,35.5,110.5\n")
    lines = ["timestamp,station_id,pm25,temp,humidity,weather_code,wind_code"]
    for h in (0, 1, 4):  # hours 2 and 3 missing entirely
        for sid, pm in (("a", 10.0 + h), ("b", 20.0 + h)):
            lines.append(f"2018-01-01T0{h}:00:00,{sid},{pm},5.0,50.0,1,2")
    (tmp_path / "readings.csv").write_text("\n".join(lines) + "\n")
    with pytest.warns(UserWarning, match="missing timesteps"):
        ds = data.load_csv(str(st), str(tmp_path / "readings.csv"))
    assert ds.steps == 5
    assert np.array_equal(ds.cont[2], ds.cont[1])
    assert np.array_equal(ds.cont[3], ds.cont[1])


# -- normalization -------------------------------------------------------------------


def test_normalize_train_stats_and_round_trip():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=16, steps=100, seed=6))
    raw = ds.cont.copy()
    ds = data.normalize(ds)
    a, _ = ds.split_bounds()
    normed = ds.normalized()
    train_part = normed[:a].reshape(-1, normed.shape[-1])
    assert np.abs(train_part.mean(axis=0)).max() < 1e-10
    assert np.abs(train_part.std(axis=0) - 1.0).max() < 1e-10
    pm_i = ds.cont_names.index("pm25")
    back = ds.norm.denormalize(normed[..., pm_i], "pm25")
    assert np.abs(back - raw[..., 0]).max() < 1e-12


def test_normalize_stats_ignore_val_and_test():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=10, steps=50, seed=7))
    a, _ = ds.split_bounds()
    ds.cont[a:] += 1000.0  # corrupt val/test only
    mean_before = ds.cont[:a, :, 0].mean()
    ds = data.normalize(ds)
    pm_i = ds.cont_names.index("pm25")
    assert ds.norm.mean[pm_i] == pytest.approx(mean_before, rel=1e-12)


def test_normalize_drops_constant_channel_with_warning():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=10, steps=40, seed=8))
    ds.cont[..., 1] = 7.0  # flatten temp
    with pytest.warns(UserWarning, match="temp"):
        ds = data.normalize(ds)
    assert ds.cont_names == ("pm25", "humidity")
    assert ds.cont.shape[-1] == 2


def test_normalize_constant_pm25_fatal():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=10, steps=40, seed=9))
    ds.cont[..., 0] = 33.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ValidationError, match="pm25"):
            data.normalize(ds)


# -- splits ------------------------------------------------------------------------


def test_split_indices_chronological_and_disjoint():
    ds = data.generate_synthetic(data.SynthConfig(n_stations=5, steps=100, seed=1))
    history = 6
    tr = ds.split_indices("train", history)
    va = ds.split_indices("val", history)
    te = ds.split_indices("test", history)
    assert tr[0] == history
    assert tr[-1] < va[0] <= va[-1] < te[0]
    assert te[-1] == ds.steps - 1
    assert len(set(tr) | set(va) | set(te)) == len(tr) + len(va) + len(te)
    assert va[0] == int(round(100 * 0.6))
    assert te[0] == int(round(100 * 0.8))


def test_batch_history_window():
    ds = data.normalize(data.generate_synthetic(
        data.SynthConfig(n_stations=5, steps=40, seed=2)))
    batch = ds.batch(np.array([10]), history=4)
    normed = ds.normalized()
    assert np.array_equal(batch["x_cont"][0], normed[10])
    for j, t in enumerate(range(6, 10)):  # [t-T, t)
        assert np.array_equal(batch["hist_cont"][0, :, j], normed[t])
        assert np.array_equal(batch["hist_weather"][0, :, j], ds.weather[t])
