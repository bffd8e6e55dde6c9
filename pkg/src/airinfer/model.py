"""The inference network: embedding with a learnable mask token, stacked
spatial blocks (dartboard local attention + spectral mixing), a gated
mixture of context experts, and an MLP decoder.

All forward functions are pure in (params, config, projections, batch)
and operate on batched arrays of shape (B, N, ...).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace, asdict

import numpy as np

from . import tensor as tz
from .errors import ConfigError, DimensionError, ValidationError
from .geo import DartboardSpec, ProjectionSet, StationSet, build_projection
from .tensor import Tensor, parameter

LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32  # E; node width is 2E
    blocks: int = 2  # L
    k_hat: int = 2  # spectral weight blocks
    sparsity: float = 1e-2  # soft-threshold lambda
    contexts: int = 4  # K
    causal_layers: int = 2  # U
    channels: int = 11  # D
    history: int = 24  # T
    dartboard: DartboardSpec = DartboardSpec()
    shared_bias: bool = False  # position bias as a shared G-vector instead of N x G
    use_local: bool = True
    use_global: bool = True
    use_causal: bool = True

    def __post_init__(self):
        if min(self.hidden, self.blocks, self.k_hat, self.contexts,
               self.causal_layers, self.channels, self.history) < 1:
            raise ConfigError("all model counts must be >= 1")
        if self.sparsity < 0:
            raise ConfigError(f"sparsity lambda must be >= 0, got {self.sparsity}")
        if (2 * self.hidden) % self.k_hat:
            raise ConfigError(f"2E={2 * self.hidden} not divisible by k_hat={self.k_hat}")
        if (2 * self.hidden) % self.heads:
            raise ConfigError(f"2E={2 * self.hidden} not divisible by heads={self.heads}")

    @property
    def heads(self) -> int:
        return self.dartboard.heads

    @property
    def width(self) -> int:
        return 2 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def alpha(self) -> float:
        return 1.0 / np.sqrt(self.head_dim)

    @property
    def regions(self) -> int:
        return self.dartboard.regions


N_WEATHER, N_WIND = 5, 8


def init_params(cfg: ModelConfig, n_stations: int, rng: np.random.Generator) -> dict:
    """Named learnable tensors. FC weights uniform +-sqrt(1/fan_in); the
    spectral blocks start near identity so early training approximates a
    pass-through; mask token and position biases start at zero."""
    p: dict[str, Tensor] = {}

    def fc(name, fan_in, fan_out, bias=True):
        lim = np.sqrt(1.0 / fan_in)
        p[f"{name}.W"] = parameter(rng.uniform(-lim, lim, (fan_in, fan_out)))
        if bias:
            p[f"{name}.b"] = parameter(np.zeros(fan_out))

    d, e, w = cfg.channels, cfg.hidden, cfg.width
    p["embed.token"] = parameter(np.zeros(d))
    p["embed.weather"] = parameter(rng.uniform(-0.1, 0.1, (N_WEATHER, 4)))
    p["embed.wind"] = parameter(rng.uniform(-0.1, 0.1, (N_WIND, 4)))
    fc("embed.cur", d, e)
    fc("embed.hist", cfg.history * d, e)

    for l in range(cfg.blocks):
        pre = f"block{l}"
        p[f"{pre}.ln1.g"] = parameter(np.ones(w))
        p[f"{pre}.ln1.b"] = parameter(np.zeros(w))
        p[f"{pre}.ln2.g"] = parameter(np.ones(w))
        p[f"{pre}.ln2.b"] = parameter(np.zeros(w))
        for h in range(cfg.heads):
            fc(f"{pre}.h{h}.q", w, cfg.head_dim, bias=False)
            fc(f"{pre}.h{h}.k", w, cfg.head_dim, bias=False)
            fc(f"{pre}.h{h}.v", w, cfg.head_dim, bias=False)
            bias_shape = (cfg.regions,) if cfg.shared_bias else (n_stations, cfg.regions)
            p[f"{pre}.h{h}.bias"] = parameter(np.zeros(bias_shape))
        fc(f"{pre}.attn.out", w, w, bias=False)
        bs = w // cfg.k_hat
        spec_w = np.zeros((cfg.k_hat, bs, bs, 2))
        spec_w[..., 0] = np.eye(bs) + 0.01 * rng.standard_normal((cfg.k_hat, bs, bs))
        spec_w[..., 1] = 0.01 * rng.standard_normal((cfg.k_hat, bs, bs))
        p[f"{pre}.spec.W"] = parameter(spec_w)
        p[f"{pre}.spec.b"] = parameter(np.zeros((cfg.k_hat, bs, 2)))
        fc(f"{pre}.mlp.fc1", w, w)
        fc(f"{pre}.mlp.fc2", w, w)

    for u in range(cfg.causal_layers):
        fc(f"causal{u}.gate", w, cfg.contexts)
        for k in range(cfg.contexts):
            fc(f"causal{u}.e{k}.fc1", w, w)
            fc(f"causal{u}.e{k}.fc2", w, w)

    fc("dec.fc1", w, w)
    fc("dec.fc2", w, d)
    return p


# -- building blocks -------------------------------------------------------------


def _linear(x: Tensor, params: dict, name: str) -> Tensor:
    y = x @ params[f"{name}.W"]
    b = params.get(f"{name}.b")
    return y + b if b is not None else y


def _mlp(x: Tensor, params: dict, name: str) -> Tensor:
    return _linear(tz.tanh(_linear(x, params, f"{name}.fc1")), params, f"{name}.fc2")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    m = x.mean(axis=-1, keepdims=True)
    centered = x - m
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / tz.sqrt(var + LN_EPS) * gamma + beta


def mask_inputs(x_feat: Tensor, hist_feat: Tensor, mask: np.ndarray, token: Tensor):
    """Replace current and every history step of masked nodes with the token."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any() or mask.all():
        raise ValidationError("mask must leave at least one observed and one masked node")
    return tz.mask_rows(x_feat, mask, token), tz.mask_rows(hist_feat, mask, token)


def embed(batch: dict, mask: np.ndarray, params: dict, cfg: ModelConfig) -> Tensor:
    """Initial node representation H in (B, N, 2E)."""
    bsz, n, c = batch["x_cont"].shape
    if c + 8 != cfg.channels or batch["hist_cont"].shape[2] != cfg.history:
        raise DimensionError(
            f"batch channels/history ({c + 8}, {batch['hist_cont'].shape[2]}) "
            f"do not match config ({cfg.channels}, {cfg.history})")
    wemb = tz.take(params["embed.weather"], batch["weather"])
    demb = tz.take(params["embed.wind"], batch["wind"])
    x = tz.concat([tz.tensor(batch["x_cont"]), wemb, demb], axis=-1)
    hw = tz.take(params["embed.weather"], batch["hist_weather"])
    hd = tz.take(params["embed.wind"], batch["hist_wind"])
    hist = tz.concat([tz.tensor(batch["hist_cont"]), hw, hd], axis=-1)
    xm, pm = mask_inputs(x, hist, mask, params["embed.token"])
    xe = _linear(xm, params, "embed.cur")
    pe = _linear(pm.reshape(bsz, n, cfg.history * cfg.channels), params, "embed.hist")
    return tz.concat([xe, pe], axis=-1)


def local_attention(z: Tensor, proj: ProjectionSet, params: dict, cfg: ModelConfig,
                    block: int, wind_codes: np.ndarray | None = None) -> Tensor:
    """Dartboard multi-head attention; returns input + attended output."""
    bsz, n, w = z.shape
    outs = []
    for h in range(cfg.heads):
        head = proj.head_for(h, wind_codes)
        q = (z @ params[f"block{block}.h{h}.q.W"]).reshape(bsz, n, 1, cfg.head_dim)
        # pooling is linear, so mapping before pooling equals mapping the
        # pooled region features and keeps the pooled tensors head-dim wide
        k = head.pool(z @ params[f"block{block}.h{h}.k.W"])
        v = head.pool(z @ params[f"block{block}.h{h}.v.W"])
        scores = (q @ tz.swap_last(k)).reshape(bsz, n, cfg.regions) * cfg.alpha
        scores = scores + params[f"block{block}.h{h}.bias"]
        empty = np.where(head.counts == 0, -1e9, 0.0)  # (N, G)
        attn = tz.softmax_lastdim(scores + tz.tensor(empty))
        outs.append((attn.reshape(bsz, n, 1, cfg.regions) @ v).reshape(bsz, n, cfg.head_dim))
    mixed = tz.concat(outs, axis=-1) @ params[f"block{block}.attn.out.W"]
    return z + mixed


def spectral_mix(z: Tensor, params: dict, cfg: ModelConfig, block: int) -> Tensor:
    """FFT over the node axis, block-diagonal complex weights shared across
    frequency bins, soft-threshold shrinkage, inverse FFT; input + real part."""
    bsz, n, w = z.shape
    bs = w // cfg.k_hat
    spec = tz.fft(tz.to_complex(z), axis=1)
    wk = tz.view_as_complex(params[f"block{block}.spec.W"])  # (k_hat, bs, bs)
    bk = tz.view_as_complex(params[f"block{block}.spec.b"])  # (k_hat, bs)
    parts = []
    for k in range(cfg.k_hat):
        # (W_k g)^T == g^T W_k^T keeps this a single wide GEMM per block
        parts.append(spec[..., k * bs:(k + 1) * bs] @ tz.swap_last(wk[k]) + bk[k])
    # threshold scales with n: unnormalized FFT magnitudes grow with node
    # count, so a fixed lambda would be a no-op at realistic station counts
    shrunk = tz.soft_threshold(tz.concat(parts, axis=-1), cfg.sparsity * n)
    back = tz.ifft(shrunk, axis=1)
    return z + tz.real(back)


def spatial_block(z: Tensor, proj: ProjectionSet, params: dict, cfg: ModelConfig,
                  block: int, wind_codes: np.ndarray | None = None) -> Tensor:
    zn = layer_norm(z, params[f"block{block}.ln1.g"], params[f"block{block}.ln1.b"])
    local = local_attention(zn, proj, params, cfg, block, wind_codes) if cfg.use_local else zn
    glob = spectral_mix(zn, params, cfg, block) if cfg.use_global else zn
    combined = z + local + glob
    zn2 = layer_norm(combined, params[f"block{block}.ln2.g"], params[f"block{block}.ln2.b"])
    return combined + _mlp(zn2, params, f"block{block}.mlp")


def causal_gates(y: Tensor, params: dict, layer: int) -> Tensor:
    return tz.softmax_lastdim(_linear(y, params, f"causal{layer}.gate"))


def causal_forward(y: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """Gated mixture of context experts with residual, applied per node."""
    if not cfg.use_causal:
        return y
    for u in range(cfg.causal_layers):
        gate = causal_gates(y, params, u)  # (B, N, K)
        out = y
        for k in range(cfg.contexts):
            expert = _mlp(y, params, f"causal{u}.e{k}")
            out = out + gate[..., k:k + 1] * expert
        y = out
    return y


def decode(y: Tensor, params: dict) -> Tensor:
    return _mlp(y, params, "dec")


def forward(batch: dict, mask: np.ndarray, params: dict, cfg: ModelConfig,
            proj: ProjectionSet) -> Tensor:
    """Full network: embed -> L spatial blocks -> causal mixture -> decode."""
    wind_codes = None
    if cfg.dartboard.orientation == "wind-aligned":
        wind_codes = np.asarray(batch["wind"])[0]  # per-node codes, fixed per batch
    z = embed(batch, mask, params, cfg)
    for l in range(cfg.blocks):
        z = spatial_block(z, proj, params, cfg, l, wind_codes)
    y = causal_forward(z, params, cfg)
    return decode(y, params)


# -- checkpoint format ------------------------------------------------------------

MAGIC = b"ARDR"
FORMAT_VERSION = 1

_CFG_SCALARS = ("hidden", "blocks", "k_hat", "sparsity", "contexts",
                "causal_layers", "channels", "history")


def save_checkpoint(path: str, params: dict, cfg: ModelConfig, stations: StationSet):
    """Binary checkpoint: magic, version u32, station count u32, then
    records {name_len u32, name, rank u32, dims u32..., f64 LE payload}.
    Complex tensors are stored with a trailing dimension of size 2."""
    db = cfg.dartboard
    meta = {f"cfg.{k}": np.array(float(getattr(cfg, k))) for k in _CFG_SCALARS}
    meta["cfg.shared_bias"] = np.array(float(cfg.shared_bias))
    meta["cfg.orientation"] = np.array(0.0 if db.orientation == "static-north" else 1.0)
    meta["cfg.sectors"] = np.array(float(db.sectors))
    meta["cfg.outer_radius_km"] = np.array(db.outer_radius_km)
    meta["cfg.ring_fractions"] = np.array(db.ring_fractions)
    meta["station.checksum"] = np.array(stations.coordinate_checksum())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, stations.n))
        for name, arr in list(meta.items()) + [(k, v.data) for k, v in sorted(params.items())]:
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str):
    """Returns (params, cfg, station_count, station_checksum)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic)")
    version, n_stations = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version {version}")
    off = 12
    records = {}
    while off < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims).copy()
        off += 8 * count
        records[name] = arr

    db = DartboardSpec(
        outer_radius_km=tuple(records.pop("cfg.outer_radius_km")),
        ring_fractions=tuple(records.pop("cfg.ring_fractions")),
        sectors=int(records.pop("cfg.sectors")),
        orientation="static-north" if records.pop("cfg.orientation") == 0.0 else "wind-aligned",
    )
    kwargs = {}
    for k in _CFG_SCALARS:
        val = float(records.pop(f"cfg.{k}"))
        kwargs[k] = val if k == "sparsity" else int(val)
    cfg = ModelConfig(dartboard=db, shared_bias=bool(records.pop("cfg.shared_bias")), **kwargs)
    checksum = float(records.pop("station.checksum"))
    params = {name: parameter(arr) for name, arr in records.items()}
    return params, cfg, n_stations, checksum


def check_station_match(n_stations: int, checksum: float, stations: StationSet):
    if n_stations != stations.n or abs(checksum - stations.coordinate_checksum()) > 1e-6:
        raise ValidationError(
            f"checkpoint was trained on a different station set "
            f"({n_stations} stations); refusing to evaluate")


def extend_params_for_pseudo_nodes(params: dict, cfg: ModelConfig, n_old: int, n_new: int) -> dict:
    """Grid inference support: per-node position bias rows for appended
    pseudo-nodes fall back to the column mean of the trained rows."""
    if cfg.shared_bias:
        return params
    out = dict(params)
    for name, p in params.items():
        if name.endswith(".bias") and p.data.shape == (n_old, cfg.regions):
            fallback = np.broadcast_to(p.data.mean(axis=0), (n_new - n_old, cfg.regions))
            out[name] = parameter(np.concatenate([p.data, fallback], axis=0))
    return out


def build_model_projection(stations: StationSet, cfg: ModelConfig) -> ProjectionSet:
    return build_projection(stations, cfg.dartboard)
