"""Datasets: synthetic generation, CSV ingestion, normalization, splits.

A dataset holds hourly snapshots of continuous readings (pm25, temp,
humidity), categorical weather codes (0-4) and wind codes (0-7) for N
stations. Normalization statistics are computed on the training split
only.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta

import numpy as np

from .errors import ValidationError, ConfigError
from .geo import StationSet

CONT_CHANNELS = ("pm25", "temp", "humidity")
N_WEATHER_CODES = 5
N_WIND_CODES = 8
EPOCH = datetime(2018, 1, 1)

TRAIN_FRAC, VAL_FRAC = 0.6, 0.2


@dataclass
class NormStats:
    names: tuple
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray, channel: str) -> np.ndarray:
        i = self.names.index(channel)
        return values * self.std[i] + self.mean[i]


@dataclass
class Dataset:
    stations: StationSet
    cont: np.ndarray  # (S, N, C) raw continuous values
    weather: np.ndarray  # (S, N) int codes
    wind: np.ndarray  # (S, N) int codes
    cont_names: tuple = CONT_CHANNELS
    norm: NormStats | None = None
    imputed: int = 0
    _normed: np.ndarray | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.cont.shape[0]

    @property
    def n(self) -> int:
        return self.stations.n

    @property
    def channels(self) -> int:
        # continuous channels plus 4-dim weather and 4-dim wind embeddings
        return len(self.cont_names) + 8

    def timestamps(self):
        return [EPOCH + timedelta(hours=int(t)) for t in range(self.steps)]

    def split_bounds(self):
        s = self.steps
        a = int(round(s * TRAIN_FRAC))
        b = int(round(s * (TRAIN_FRAC + VAL_FRAC)))
        return a, b

    def split_indices(self, split: str, history: int) -> np.ndarray:
        """Sample timesteps for a split; a sample at t consumes history [t-T, t)."""
        a, b = self.split_bounds()
        lo, hi = {"train": (history, a), "val": (a, b), "test": (b, self.steps)}[split]
        lo = max(lo, history)
        return np.arange(lo, hi)

    def normalized(self) -> np.ndarray:
        if self.norm is None:
            raise ValidationError("dataset is not normalized; call normalize() first")
        if self._normed is None:
            self._normed = self.norm.normalize(self.cont)
        return self._normed

    def batch(self, ts: np.ndarray, history: int) -> dict:
        """Assemble model inputs for sample timesteps ``ts``."""
        normed = self.normalized()
        ts = np.asarray(ts)
        hist_idx = ts[:, None] - history + np.arange(history)[None, :]
        return {
            "x_cont": normed[ts],  # (B, N, C)
            "weather": self.weather[ts],
            "wind": self.wind[ts],
            "hist_cont": normed[hist_idx].transpose(0, 2, 1, 3),  # (B, N, T, C)
            "hist_weather": self.weather[hist_idx].transpose(0, 2, 1),
            "hist_wind": self.wind[hist_idx].transpose(0, 2, 1),
            "pm25_raw": self.cont[ts][..., self.cont_names.index("pm25")],
        }


def normalize(dataset: Dataset) -> Dataset:
    """Z-score continuous channels with training-split statistics.

    Channels that are constant on the training split are dropped with a
    warning. Categorical codes pass through untouched.
    """
    a, _ = dataset.split_bounds()
    train = dataset.cont[:a]
    mean = train.reshape(-1, train.shape[-1]).mean(axis=0)
    std = train.reshape(-1, train.shape[-1]).std(axis=0)
    keep = std > 0.0
    if not keep.all():
        dropped = [n for n, k in zip(dataset.cont_names, keep) if not k]
        warnings.warn(f"dropping constant channels: {dropped}")
    names = tuple(n for n, k in zip(dataset.cont_names, keep) if k)
    if "pm25" not in names:
        raise ValidationError("pm25 channel is constant; dataset unusable")
    dataset.cont = dataset.cont[..., keep]
    dataset.cont_names = names
    dataset.norm = NormStats(names, mean[keep], std[keep])
    dataset._normed = None
    return dataset


# -- synthetic generation ---------------------------------------------------------


@dataclass
class SynthConfig:
    n_stations: int = 256
    steps: int = 2000
    plumes: int = 8
    regions: int = 4
    region_baselines: tuple | None = None
    noise_sd: float = 3.0
    clusters: int = 8
    cluster_amp: float = 12.0
    wind_speed_kmh: float = 25.0
    wind_rotation_per_step: float = 0.15  # degrees/hour drift of the prevailing wind
    plume_amp: tuple = (40.0, 90.0)
    plume_sigma_km: tuple = (60.0, 140.0)
    bbox: tuple = (32.0, 42.0, 108.0, 122.0)  # lat0, lat1, lon0, lon1
    seed: int = 0

    def __post_init__(self):
        if self.n_stations < 2 or self.steps < 1 or self.plumes < 0 or self.regions < 1:
            raise ConfigError("synthetic config counts must be positive")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.clusters < 1 or self.cluster_amp < 0:
            raise ConfigError("clusters must be >= 1 and cluster_amp >= 0")


def _region_of(lon: np.ndarray, lat: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    # Longitude bands; simple but gives sharp spatial heterogeneity.
    lat0, lat1, lon0, lon1 = cfg.bbox
    frac = (lon - lon0) / max(lon1 - lon0, 1e-12)
    return np.clip((frac * cfg.regions).astype(np.int64), 0, cfg.regions - 1)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Plume-advection synthetic data with regional baselines and AR(1) noise."""
    rng = np.random.default_rng(cfg.seed)
    lat0, lat1, lon0, lon1 = cfg.bbox
    lat = rng.uniform(lat0, lat1, cfg.n_stations)
    lon = rng.uniform(lon0, lon1, cfg.n_stations)
    ids = tuple(f"s{i:04d}" for i in range(cfg.n_stations))
    stations = StationSet(ids, lat, lon)

    baselines = cfg.region_baselines
    if baselines is None:
        baselines = tuple(12.0 + 22.0 * r for r in range(cfg.regions))
    if len(baselines) != cfg.regions:
        raise ConfigError("region_baselines length must equal regions")
    region = _region_of(lon, lat, cfg)
    base = np.asarray(baselines)[region]

    # local km coordinates (equirectangular, fine at this scale)
    mid = np.radians((lat0 + lat1) / 2.0)
    xs = (lon - lon0) * 111.32 * np.cos(mid)
    ys = (lat - lat0) * 110.57

    n_pl = cfg.plumes
    px = rng.uniform(xs.min(), xs.max(), n_pl) if n_pl else np.zeros(0)
    py = rng.uniform(ys.min(), ys.max(), n_pl) if n_pl else np.zeros(0)
    amp = rng.uniform(*cfg.plume_amp, n_pl)
    sig = rng.uniform(*cfg.plume_sigma_km, n_pl)

    # Emission-profile clusters: stations share a slowly varying source signal
    # (traffic / industrial / heating mix). Assigned round-robin over station
    # index — station ids carry no spatial order, so the pattern is scattered
    # across the map and invisible to distance-based interpolation, while being
    # periodic along the index axis. Signal drawn from a side stream so the
    # main draw sequence (stations, plumes, noise) is unaffected by the knobs.
    crng = np.random.default_rng((cfg.seed, 101))
    cluster = np.arange(cfg.n_stations) % cfg.clusters
    rho_c = 0.95
    csig = np.zeros((cfg.steps, cfg.clusters))
    csig[0] = cfg.cluster_amp * crng.standard_normal(cfg.clusters)
    innov = cfg.cluster_amp * np.sqrt(1.0 - rho_c ** 2)
    for t in range(1, cfg.steps):
        csig[t] = rho_c * csig[t - 1] + innov * crng.standard_normal(cfg.clusters)

    theta0 = rng.uniform(0.0, 360.0)
    ar = np.zeros(cfg.n_stations)
    rho = 0.8

    cont = np.zeros((cfg.steps, cfg.n_stations, 3))
    weather = np.zeros((cfg.steps, cfg.n_stations), dtype=np.int64)
    wind = np.zeros((cfg.steps, cfg.n_stations), dtype=np.int64)

    # slow spatial modulation of the wind bearing across the domain
    wind_phase = 0.25 * xs / max(xs.max(), 1.0) * 360.0 * 0.1

    for t in range(cfg.steps):
        theta = (theta0 + cfg.wind_rotation_per_step * t) % 360.0
        theta_s = (theta + wind_phase) % 360.0
        pm = base + csig[t, cluster]
        if n_pl:
            rad = np.radians(theta)
            ux, uy = np.sin(rad), np.cos(rad)  # downwind unit vector (bearing convention)
            dx = xs[:, None] - px[None, :]
            dy = ys[:, None] - py[None, :]
            along = dx * ux + dy * uy
            cross = -dx * uy + dy * ux
            sa = np.where(along >= 0, sig[None, :], sig[None, :] * 0.35)
            sc = sig[None, :] * 0.5
            pm += (amp[None, :] * np.exp(-(along ** 2) / (2 * sa ** 2) - (cross ** 2) / (2 * sc ** 2))).sum(axis=1)
        ar = rho * ar + cfg.noise_sd * rng.standard_normal(cfg.n_stations)
        pm = np.maximum(pm + ar, 0.0)

        hour = 2.0 * np.pi * (t % 24) / 24.0
        temp = 15.0 + 10.0 * np.sin(hour) + 0.8 * (lat - lat.mean()) + 0.5 * rng.standard_normal(cfg.n_stations)
        hum = np.clip(55.0 + 25.0 * np.sin(hour + 2.0) + 1.5 * (lon - lon.mean()) + rng.standard_normal(cfg.n_stations), 0.0, 100.0)

        cont[t, :, 0] = pm
        cont[t, :, 1] = temp
        cont[t, :, 2] = np.maximum(hum, 0.0)
        wind[t] = ((theta_s + 22.5) // 45.0).astype(np.int64) % N_WIND_CODES
        weather[t] = np.clip((hum / 100.0 * N_WEATHER_CODES).astype(np.int64), 0, N_WEATHER_CODES - 1)

    return Dataset(stations, cont, weather, wind)


# -- CSV interchange -----------------------------------------------------------


def write_dataset(dataset: Dataset, out_dir: str, meta: dict | None = None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "stations.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "lat", "lon"])
        for sid, la, lo in zip(dataset.stations.ids, dataset.stations.lat, dataset.stations.lon):
            w.writerow([sid, repr(float(la)), repr(float(lo))])
    times = dataset.timestamps()
    with open(os.path.join(out_dir, "readings.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "station_id", "pm25", "temp", "humidity", "weather_code", "wind_code"])
        for t, ts in enumerate(times):
            stamp = ts.strftime("%Y-%m-%dT%H:%M:%S")
            for i, sid in enumerate(dataset.stations.ids):
                w.writerow([
                    stamp, sid,
                    repr(float(dataset.cont[t, i, 0])),
                    repr(float(dataset.cont[t, i, 1])),
                    repr(float(dataset.cont[t, i, 2])),
                    int(dataset.weather[t, i]),
                    int(dataset.wind[t, i]),
                ])
    if meta is not None:
        with open(os.path.join(out_dir, "meta.json"), "w") as f:
            json.dump(meta, f, indent=2, default=str)


def load_stations_csv(path: str) -> StationSet:
    ids, lats, lons = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "lat", "lon"]:
            raise ValidationError(f"{path}: expected header id,lat,lon")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                ids.append(row[0])
                lats.append(float(row[1]))
                lons.append(float(row[2]))
            except ValueError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from None
    if not ids:
        raise ValidationError(f"{path}: no stations")
    return StationSet(tuple(ids), np.array(lats), np.array(lons))


def load_csv(stations_path: str, readings_path: str) -> Dataset:
    """Load station and reading CSVs; impute missing numerics, fill short gaps."""
    stations = load_stations_csv(stations_path)
    index = {sid: i for i, sid in enumerate(stations.ids)}
    rows = []  # (hour, station_idx, pm25|None, temp|None, hum|None, wcode, dcode)
    with open(readings_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["timestamp", "station_id", "pm25", "temp", "humidity", "weather_code", "wind_code"]
        if header is None or [h.strip() for h in header] != expected:
            raise ValidationError(f"{readings_path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ValidationError(f"{readings_path}:{lineno}: expected 7 fields, got {len(row)}")
            try:
                stamp = datetime.strptime(row[0], "%Y-%m-%dT%H:%M:%S")
                hour = int((stamp - EPOCH).total_seconds() // 3600)
                sid = row[1]
                if sid not in index:
                    raise ValidationError(f"{readings_path}:{lineno}: unknown station id {sid!r}")
                vals = [float(v) if v != "" else None for v in row[2:5]]
                wcode, dcode = int(row[5]), int(row[6])
            except ValidationError:
                raise
            except ValueError as e:
                raise ValidationError(f"{readings_path}:{lineno}: {e}") from None
            rows.append((hour, index[sid], vals[0], vals[1], vals[2], wcode, dcode))
    if not rows:
        raise ValidationError(f"{readings_path}: no samples")

    rows.sort(key=lambda r: r[0])
    hours = sorted({r[0] for r in rows})
    h0 = hours[0]
    steps = hours[-1] - h0 + 1
    gaps = steps - len(hours)
    if gaps:
        warnings.warn(f"{readings_path}: {gaps} missing timesteps; forward-filling up to 3 steps")

    n = stations.n
    cont = np.full((steps, n, 3), np.nan)
    weather = np.full((steps, n), -1, dtype=np.int64)
    wind = np.full((steps, n), -1, dtype=np.int64)
    for hour, si, pm, te, hu, wc, dc in rows:
        t = hour - h0
        cont[t, si] = [pm if pm is not None else np.nan,
                       te if te is not None else np.nan,
                       hu if hu is not None else np.nan]
        weather[t, si] = wc
        wind[t, si] = dc

    # forward-fill whole-row gaps up to 3 steps
    run = 0
    for t in range(steps):
        if np.isnan(cont[t]).all() and weather[t].max() < 0:
            run += 1
            if run <= 3 and t > 0:
                cont[t] = cont[t - 1]
                weather[t] = weather[t - 1]
                wind[t] = wind[t - 1]
        else:
            run = 0

    imputed = int(np.isnan(cont).sum())
    if imputed:
        med = np.nanmedian(np.where(np.isnan(cont), np.nan, cont), axis=0)  # (N, 3) station medians
        med = np.where(np.isnan(med), np.nanmedian(cont.reshape(-1, 3), axis=0), med)
        idx = np.isnan(cont)
        cont[idx] = np.broadcast_to(med, cont.shape)[idx]
    weather[weather < 0] = 0
    wind[wind < 0] = 0

    return Dataset(stations, cont, weather, wind, imputed=imputed)


def synth_meta(cfg: SynthConfig) -> dict:
    return {"generator": "airinfer.data.generate_synthetic", "config": asdict(cfg)}
