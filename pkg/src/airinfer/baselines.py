"""Classical interpolators used as comparison floors: k-nearest-neighbor
averaging and inverse-distance weighting, both over haversine distance."""

from __future__ import annotations

import warnings

import numpy as np

from .geo import haversine_km


def knn_infer(obs_lat, obs_lon, obs_values, tgt_lat, tgt_lon, k: int = 5) -> np.ndarray:
    """Mean of the k nearest observed values; ties broken by station index."""
    obs_values = np.asarray(obs_values, dtype=np.float64)
    n_obs = obs_values.shape[-1]
    if k > n_obs:
        warnings.warn(f"k={k} exceeds {n_obs} observed stations; clamping")
        k = n_obs
    d = haversine_km(np.asarray(tgt_lat)[:, None], np.asarray(tgt_lon)[:, None],
                     np.asarray(obs_lat)[None, :], np.asarray(obs_lon)[None, :])
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    if obs_values.ndim == 1:
        return obs_values[nearest].mean(axis=1)
    return obs_values[:, nearest].mean(axis=2)  # batched (B, n_obs) values


def idw_infer(obs_lat, obs_lon, obs_values, tgt_lat, tgt_lon, power: float = 2.0) -> np.ndarray:
    """Shepard interpolation sum(w v)/sum(w), w = d^-p; exact hits return the value."""
    obs_values = np.asarray(obs_values, dtype=np.float64)
    d = haversine_km(np.asarray(tgt_lat)[:, None], np.asarray(tgt_lon)[:, None],
                     np.asarray(obs_lat)[None, :], np.asarray(obs_lon)[None, :])
    hit = d < 1e-9
    with np.errstate(divide="ignore"):
        w = np.where(hit, 0.0, d) ** -power
    w = np.where(hit, 0.0, w)
    exact = hit.any(axis=1)
    w[exact] = hit[exact].astype(np.float64)  # exact hit dominates its row
    w /= w.sum(axis=1, keepdims=True)
    if obs_values.ndim == 1:
        return w @ obs_values
    return obs_values @ w.T  # (B, n_tgt)


def baseline_predictor(dataset, kind: str, **kwargs):
    """Wrap a baseline as an evaluate() predictor over raw PM2.5."""
    lat, lon = dataset.stations.lat, dataset.stations.lon

    def predict(batch, mask):
        obs = ~mask
        values = batch["pm25_raw"][:, obs]
        if kind == "knn":
            return knn_infer(lat[obs], lon[obs], values, lat[mask], lon[mask], **kwargs)
        if kind == "idw":
            return idw_infer(lat[obs], lon[obs], values, lat[mask], lon[mask], **kwargs)
        raise ValueError(f"unknown baseline {kind!r}")

    return predict
