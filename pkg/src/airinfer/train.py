"""Masking protocol, masked L1 objective, Adam, metrics, and the epoch loop."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import tensor as tz
from .data import Dataset
from .errors import ConfigError, DimensionError, NumericError, UsageError, ValidationError
from .geo import ProjectionSet
from .tensor import Tensor, zero_grads


@dataclass
class MaskPattern:
    mask: np.ndarray  # bool, True = unobserved/target
    ratio: float

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


@dataclass
class TrainConfig:
    lr: float = 5e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    seed: int = 0
    ratios: tuple = (0.25, 0.5, 0.75)
    patience: int = 10

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if any(not 0.0 < r < 1.0 for r in self.ratios):
            raise ConfigError(f"mask ratios must lie in (0,1), got {self.ratios}")


def sample_mask(n: int, ratio: float, rng: np.random.Generator) -> MaskPattern:
    """Uniform random subset of round(N*ratio) target nodes."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0,1), got {ratio}")
    if n < 2:
        raise ConfigError("need at least 2 nodes to mask")
    count = int(np.clip(round(n * ratio), 1, n - 1))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=count, replace=False)] = True
    return MaskPattern(mask, ratio)


def masked_l1(x_true: np.ndarray, x_pred: Tensor, pattern: MaskPattern,
              cont_channels: int) -> Tensor:
    """(1/N_u) sum over target nodes and continuous channels of |true - pred|,
    averaged over the batch. Observed-node predictions never enter."""
    idx = np.nonzero(pattern.mask)[0]
    if idx.size == 0:
        raise ValidationError("mask selects no target nodes")
    if x_true.shape[:2] != x_pred.shape[:2]:
        raise DimensionError(f"truth {x_true.shape} vs prediction {tuple(x_pred.shape)}")
    pred = tz.take(x_pred, idx, axis=1)[..., :cont_channels]
    true = x_true[:, idx, :cont_channels]
    bsz = x_true.shape[0]
    return tz.tabs(pred - tz.tensor(true)).sum() * (1.0 / (idx.size * bsz))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, state: AdamState, cfg: TrainConfig):
    """Standard bias-corrected Adam update in place; zero-grad params are left alone."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        p.data -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


# -- metrics & evaluation -----------------------------------------------------------


@dataclass
class Metrics:
    mae: float
    rmse: float
    mape: float


def compute_metrics(preds: np.ndarray, truths: np.ndarray) -> Metrics:
    """MAE/RMSE over everything; MAPE skips truth values below 1.0."""
    if preds.size == 0:
        raise UsageError("no predictions to score")
    err = preds - truths
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    ok = truths >= 1.0
    mape = float((np.abs(err[ok]) / truths[ok]).mean()) if ok.any() else 0.0
    return Metrics(mae, rmse, mape)


def evaluate(predict, dataset: Dataset, history: int, ratio: float, seed: int,
             split: str = "test", batch_size: int = 32) -> Metrics:
    """Score a predictor on the PM2.5 channel in raw units.

    ``predict(batch, mask) -> (B, n_masked)`` raw PM2.5 at masked nodes.
    Masks are drawn from a generator seeded by (seed, ratio) only, so
    every model sees identical masks.
    """
    idxs = dataset.split_indices(split, history)
    if idxs.size == 0:
        raise UsageError(f"split {split!r} has no samples")
    rng = np.random.default_rng((seed, int(ratio * 1000)))
    preds, truths = [], []
    for start in range(0, idxs.size, batch_size):
        ts = idxs[start:start + batch_size]
        pattern = sample_mask(dataset.n, ratio, rng)
        batch = dataset.batch(ts, history)
        preds.append(np.asarray(predict(batch, pattern.mask)).ravel())
        truths.append(batch["pm25_raw"][:, pattern.mask].ravel())
    return compute_metrics(np.concatenate(preds), np.concatenate(truths))


def model_predictor(params: dict, cfg: mdl.ModelConfig, proj: ProjectionSet, dataset: Dataset):
    """Wrap the network as an evaluate() predictor returning raw PM2.5."""
    pm_i = dataset.cont_names.index("pm25")

    def predict(batch, mask):
        out = mdl.forward(batch, mask, params, cfg, proj)
        return dataset.norm.denormalize(out.data[:, mask, pm_i], "pm25")

    return predict


# -- the epoch loop -----------------------------------------------------------------


def train_loop(dataset: Dataset, mcfg: mdl.ModelConfig, tcfg: TrainConfig,
               ckpt_path: str | None = None, log_path: str | None = None,
               log_fn=None) -> dict:
    """Train with per-batch resampled mask ratios; best-validation-MAE
    checkpointing and patience-based early stop.

    Returns {"params", "history", "best_val_mae", "epochs_run"}.
    """
    rng = np.random.default_rng(tcfg.seed)
    proj = mdl.build_model_projection(dataset.stations, mcfg)
    params = mdl.init_params(mcfg, dataset.n, rng)
    state = AdamState()
    cont = len(dataset.cont_names)

    train_idx = dataset.split_indices("train", mcfg.history)
    if train_idx.size == 0:
        raise UsageError("training split is empty")

    best = {"val_mae": np.inf, "params": None}
    history = []
    bad_epochs = 0
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(tcfg.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(train_idx)
            losses = []
            for start in range(0, order.size, tcfg.batch_size):
                ts = order[start:start + tcfg.batch_size]
                ratio = tcfg.ratios[rng.integers(len(tcfg.ratios))]
                pattern = sample_mask(dataset.n, ratio, rng)
                batch = dataset.batch(ts, mcfg.history)
                zero_grads(params)
                out = mdl.forward(batch, pattern.mask, params, mcfg, proj)
                loss = masked_l1(batch["x_cont"], out, pattern, cont)
                if np.isnan(loss.data):
                    raise NumericError(
                        f"training diverged (NaN loss) at epoch {epoch}; "
                        f"best checkpoint preserved")
                loss.backward()
                adam_step(params, state, tcfg)
                losses.append(loss.item())

            val = evaluate(model_predictor(params, mcfg, proj, dataset), dataset,
                           mcfg.history, ratio=0.5, seed=tcfg.seed, split="val",
                           batch_size=tcfg.batch_size)
            record = {"epoch": epoch, "loss": float(np.mean(losses)),
                      "val_mae": val.mae, "seconds": time.perf_counter() - t0}
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if log_fn:
                log_fn(record)

            if val.mae < best["val_mae"]:
                best["val_mae"] = val.mae
                best["params"] = {k: p.data.copy() for k, p in params.items()}
                bad_epochs = 0
                if ckpt_path:
                    mdl.save_checkpoint(ckpt_path, params, mcfg, dataset.stations)
            else:
                bad_epochs += 1
                if bad_epochs > tcfg.patience:
                    break
    finally:
        if log_file:
            log_file.close()

    if best["params"] is not None:
        for k, p in params.items():
            p.data = best["params"][k]
    return {"params": params, "history": history,
            "best_val_mae": best["val_mae"], "epochs_run": len(history)}
