import numpy as np
import pytest

from airinfer import data
from airinfer.geo import StationSet

KM_PER_DEG_LAT = 111.19

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def place(lat0: float, lon0: float, dist_km: float, bearing_deg: float):
    """Offset a point by distance/bearing using a flat-earth approximation.

    Good to well under a km at the scales used in tests, which is plenty
    for region-binning checks with margins of several km.
    """
    b = np.radians(bearing_deg)
    dlat = dist_km * np.cos(b) / KM_PER_DEG_LAT
    dlon = dist_km * np.sin(b) / (KM_PER_DEG_LAT * np.cos(np.radians(lat0)))
    return lat0 + dlat, lon0 + dlon


def rand_stations(rng: np.random.Generator, n: int, side_deg: float = 4.0) -> StationSet:
    lat = rng.uniform(34.0, 34.0 + side_deg, n)
    lon = rng.uniform(110.0, 110.0 + side_deg, n)
    return StationSet(tuple(f"s{i}" for i in range(n)), lat, lon)


def make_batch(rng: np.random.Generator, n: int, history: int, bsz: int = 2) -> dict:
    return {
        "x_cont": rng.normal(0.0, 1.0, (bsz, n, 3)),
        "weather": rng.integers(0, 5, (bsz, n)),
        "wind": rng.integers(0, 8, (bsz, n)),
        "hist_cont": rng.normal(0.0, 1.0, (bsz, n, history, 3)),
        "hist_weather": rng.integers(0, 5, (bsz, n, history)),
        "hist_wind": rng.integers(0, 8, (bsz, n, history)),
    }


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small synthetic dataset for train/data/cli tests (normalized)."""
    cfg = data.SynthConfig(n_stations=24, steps=120, plumes=4, seed=7)
    return data.normalize(data.generate_synthetic(cfg))


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    """The same small dataset written out as CSV files for CLI tests."""
    cfg = data.SynthConfig(n_stations=24, steps=120, plumes=4, seed=7)
    ds = data.generate_synthetic(cfg)
    out = tmp_path_factory.mktemp("tinydata")
    data.write_dataset(ds, str(out), meta=data.synth_meta(cfg))
    return out
