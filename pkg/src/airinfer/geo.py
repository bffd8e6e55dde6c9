"""Station geometry: great-circle math and dartboard projection matrices.

Each node's neighborhood is split into ring x sector regions per
attention head; a sparse matrix per head maps node features to
mean-pooled region features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ValidationError
from .tensor import Tensor, sparse_pool

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class StationSet:
    ids: tuple
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lat", np.asarray(self.lat, dtype=np.float64))
        object.__setattr__(self, "lon", np.asarray(self.lon, dtype=np.float64))
        if len(self.ids) != len(set(self.ids)):
            raise ValidationError("station ids must be unique")
        if len(self.ids) != self.lat.size or self.lat.size != self.lon.size:
            raise ValidationError("ids/lat/lon lengths disagree")
        _check_coords(self.lat, self.lon)

    @property
    def n(self) -> int:
        return self.lat.size

    def coordinate_checksum(self) -> float:
        return float(np.sum(self.lat * 3.0 + self.lon * 7.0))


@dataclass(frozen=True)
class DartboardSpec:
    outer_radius_km: tuple = (50.0, 200.0)
    ring_fractions: tuple = (0.5, 1.0)
    sectors: int = 8
    orientation: str = "static-north"  # or "wind-aligned"

    def __post_init__(self):
        fr = tuple(float(f) for f in self.ring_fractions)
        object.__setattr__(self, "ring_fractions", fr)
        object.__setattr__(self, "outer_radius_km", tuple(float(r) for r in self.outer_radius_km))
        if any(b <= a for a, b in zip(fr, fr[1:])) or not fr or fr[-1] != 1.0:
            raise ConfigError("ring_fractions must be strictly increasing and end at 1.0")
        if self.sectors < 1:
            raise ConfigError("sectors must be >= 1")
        if any(r <= 0 for r in self.outer_radius_km):
            raise ConfigError("outer radii must be positive")
        if self.orientation not in ("static-north", "wind-aligned"):
            raise ConfigError(f"unknown orientation {self.orientation!r}")

    @property
    def rings(self) -> int:
        return len(self.ring_fractions)

    @property
    def regions(self) -> int:
        return self.rings * self.sectors

    @property
    def heads(self) -> int:
        return len(self.outer_radius_km)


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise ValidationError("coordinates out of range: lat in [-90,90], lon in [-180,180]")


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; accepts scalars or broadcastable arrays."""
    _check_coords(lat1, lon1)
    _check_coords(lat2, lon2)
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2, dtype=np.float64)) - np.radians(np.asarray(lon1, dtype=np.float64))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def initial_bearing_deg(lat1, lon1, lat2, lon2):
    """Initial great-circle bearing from point 1 to point 2, degrees in [0, 360)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlam = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    y = np.sin(dlam) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlam)
    return np.degrees(np.arctan2(y, x)) % 360.0


@dataclass
class HeadProjection:
    """One head's pooled-region structure at a fixed orientation."""

    matrix: sp.csr_matrix  # (N*G, N), rows mean-normalized
    counts: np.ndarray  # (N, G) member counts
    regions: int

    def pool(self, features: Tensor) -> Tensor:
        return sparse_pool(features, self.matrix, self.regions)


@dataclass
class ProjectionSet:
    spec: DartboardSpec
    n: int
    heads: list  # static-north: list[HeadProjection]
    rotations: list = field(default_factory=list)  # wind-aligned: [code][head]

    def head_for(self, h: int, wind_codes: np.ndarray | None = None) -> HeadProjection:
        if self.spec.orientation == "static-north" or wind_codes is None:
            return self.heads[h]
        return _select_rows_by_code(self.rotations, h, np.asarray(wind_codes), self.spec.regions, self.n)


def _select_rows_by_code(rotations, h: int, codes: np.ndarray, g: int, n: int) -> HeadProjection:
    blocks = []
    counts = np.zeros((n, g), dtype=np.int64)
    for i in range(n):
        hp = rotations[int(codes[i]) % len(rotations)][h]
        blocks.append(hp.matrix[i * g:(i + 1) * g])
        counts[i] = hp.counts[i]
    return HeadProjection(sp.vstack(blocks).tocsr(), counts, g)


def _bin_regions(dist_row, bearing_row, i, spec: DartboardSpec, outer: float, azimuth: float):
    """Region index per station for query node i, or -1 when out of range."""
    edges = np.asarray(spec.ring_fractions) * outer
    region = np.full(dist_row.size, -1, dtype=np.int64)
    in_range = dist_row < outer
    in_range[i] = False
    if not in_range.any():
        return region
    d = dist_row[in_range]
    ring = np.searchsorted(edges, d, side="right")
    width = 360.0 / spec.sectors
    rel = (bearing_row[in_range] - azimuth + width / 2.0) % 360.0
    sector = np.minimum((rel / width).astype(np.int64), spec.sectors - 1)
    region[in_range] = ring * spec.sectors + sector
    return region


def _head_projection(region_of: np.ndarray, g: int) -> HeadProjection:
    n = region_of.shape[0]
    rows, cols, vals = [], [], []
    counts = np.zeros((n, g), dtype=np.int64)
    for i in range(n):
        reg = region_of[i]
        members = np.nonzero(reg >= 0)[0]
        if members.size == 0:
            continue
        np.add.at(counts[i], reg[members], 1)
        rows.append(i * g + reg[members])
        cols.append(members)
        vals.append(1.0 / counts[i][reg[members]])
    if rows:
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * g, n),
        )
    else:
        mat = sp.csr_matrix((n * g, n))
    return HeadProjection(mat, counts, g)


def region_assignments(stations: StationSet, spec: DartboardSpec, outer: float, azimuth: float) -> np.ndarray:
    """(N, N) array: region_of[i, j] = region of j on i's dartboard, -1 outside."""
    dist = haversine_km(stations.lat[:, None], stations.lon[:, None], stations.lat[None, :], stations.lon[None, :])
    bearing = initial_bearing_deg(stations.lat[:, None], stations.lon[:, None], stations.lat[None, :], stations.lon[None, :])
    out = np.empty((stations.n, stations.n), dtype=np.int64)
    for i in range(stations.n):
        out[i] = _bin_regions(dist[i], bearing[i], i, spec, outer, azimuth)
    return out


def build_projection(stations: StationSet, spec: DartboardSpec) -> ProjectionSet:
    """Bin every in-range neighbor by (ring from distance, sector from bearing).

    Sector 0's bisector points at the orientation azimuth; intervals are
    closed at the lower edge. Node i itself is always excluded.
    """
    if stations.n < 1:
        raise ValidationError("need at least one station")
    dist = haversine_km(stations.lat[:, None], stations.lon[:, None], stations.lat[None, :], stations.lon[None, :])
    bearing = initial_bearing_deg(stations.lat[:, None], stations.lon[:, None], stations.lat[None, :], stations.lon[None, :])
    g = spec.regions

    def build_heads(azimuth: float):
        heads = []
        for outer in spec.outer_radius_km:
            region_of = np.empty((stations.n, stations.n), dtype=np.int64)
            for i in range(stations.n):
                region_of[i] = _bin_regions(dist[i], bearing[i], i, spec, outer, azimuth)
            heads.append(_head_projection(region_of, g))
        return heads

    if spec.orientation == "static-north":
        return ProjectionSet(spec, stations.n, build_heads(0.0))
    rotations = [build_heads(code * 45.0) for code in range(8)]
    return ProjectionSet(spec, stations.n, rotations[0], rotations)
