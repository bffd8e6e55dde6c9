"""Timing harness for the spatial kernels and log-log scaling-exponent fits.

Layouts are generated at constant station density (area grows with N) so
the in-range neighbor count stays flat while N scales; that is the regime
the linear-cost claim for the dartboard attention is about.
"""

from __future__ import annotations

import time

import numpy as np

from . import model as mdl
from . import tensor as tz
from .geo import DartboardSpec, StationSet, build_projection
from .errors import ConfigError

BASE_BBOX_DEG = 6.0  # box side at the reference N below
BASE_N = 256


def make_layout(n: int, rng: np.random.Generator) -> StationSet:
    side = BASE_BBOX_DEG * np.sqrt(n / BASE_N)
    lat = rng.uniform(34.0, 34.0 + side, n)
    lon = rng.uniform(110.0, 110.0 + side, n)
    return StationSet(tuple(f"b{i}" for i in range(n)), lat, lon)


def _local_kernel(n: int, e: int, rng: np.random.Generator):
    cfg = mdl.ModelConfig(hidden=e, blocks=1, history=2)
    stations = make_layout(n, rng)
    proj = build_projection(stations, cfg.dartboard)
    params = {k: tz.tensor(v.data) for k, v in mdl.init_params(cfg, n, rng).items()}
    z = tz.tensor(rng.standard_normal((1, n, cfg.width)))
    return lambda: mdl.local_attention(z, proj, params, cfg, 0)


def _spectral_kernel(n: int, e: int, rng: np.random.Generator):
    cfg = mdl.ModelConfig(hidden=e, blocks=1, history=2)
    params = {k: tz.tensor(v.data) for k, v in mdl.init_params(cfg, n, rng).items()}
    z = tz.tensor(rng.standard_normal((1, n, cfg.width)))
    return lambda: mdl.spectral_mix(z, params, cfg, 0)


def _dense_kernel(n: int, e: int, rng: np.random.Generator):
    """Reference O(N^2 E) multi-head self-attention over all node pairs."""
    w = 2 * e
    z = tz.tensor(rng.standard_normal((1, n, w)))
    wq = tz.tensor(rng.standard_normal((w, w)) / np.sqrt(w))
    wk = tz.tensor(rng.standard_normal((w, w)) / np.sqrt(w))
    wv = tz.tensor(rng.standard_normal((w, w)) / np.sqrt(w))
    wo = tz.tensor(rng.standard_normal((w, w)) / np.sqrt(w))
    alpha = 1.0 / np.sqrt(w)

    def run():
        q, k, v = z @ wq, z @ wk, z @ wv
        attn = tz.softmax_lastdim((q @ tz.swap_last(k)) * alpha)
        return (attn @ v) @ wo

    return run


KERNELS = {"local": _local_kernel, "dense": _dense_kernel, "spectral": _spectral_kernel}


def time_kernel(kind: str, ns, e: int = 32, reps: int = 5, seed: int = 0):
    """Min-of-reps forward wall time per N. Returns list of (n, seconds)."""
    if kind not in KERNELS:
        raise ConfigError(f"unknown kernel {kind!r}; choose from {sorted(KERNELS)}")
    rng = np.random.default_rng(seed)
    results = []
    for n in ns:
        run = KERNELS[kind](int(n), e, rng)
        run()  # warm-up
        best = min(_timed(run) for _ in range(reps))
        results.append((int(n), best))
    return results


def _timed(run) -> float:
    t0 = time.perf_counter()
    run()
    return time.perf_counter() - t0


def fit_exponent(results) -> float:
    """Least-squares slope of log(time) against log(N)."""
    ns = np.log([n for n, _ in results])
    ts = np.log([t for _, t in results])
    slope, _ = np.polyfit(ns, ts, 1)
    return float(slope)
