"""Command-line entry point: gen-data, train, eval, infer, bench, sweep."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import bench as bench_mod
from . import data as data_mod
from . import model as mdl
from . import train as train_mod
from .baselines import baseline_predictor
from .errors import ConfigError, UsageError
from .geo import DartboardSpec, StationSet

MODEL_NAME = "airinfer"

# config-file key -> (target, field, type); "model"/"train" pick the dataclass
_MODEL_KEYS = {
    "E": ("hidden", int),
    "L": ("blocks", int),
    "k_hat": ("k_hat", int),
    "lambda": ("sparsity", float),
    "K": ("contexts", int),
    "U": ("causal_layers", int),
    "T": ("history", int),
    "shared_bias": ("shared_bias", bool),
}
_DARTBOARD_KEYS = {
    "radii": ("outer_radius_km", list),
    "ring_fractions": ("ring_fractions", list),
    "sectors": ("sectors", int),
    "orientation": ("orientation", str),
}
_TRAIN_KEYS = {
    "lr": ("lr", float),
    "batch": ("batch_size", int),
    "epochs": ("epochs", int),
    "seed": ("seed", int),
    "ratios": ("ratios", list),
    "patience": ("patience", int),
}
_SYNTH_KEYS = {f.name: (f.name, None) for f in dataclasses.fields(data_mod.SynthConfig)}


def _coerce(key: str, value, want):
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r}: expected bool, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r}: expected integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r}: expected number, got {value!r}")
        return float(value)
    if want is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {key!r}: expected list, got {value!r}")
        return tuple(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r}: expected string, got {value!r}")
        return value
    return value


def _read_toml(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        return tomllib.load(f)


def load_model_train_config(path: str | None):
    raw = _read_toml(path)
    mkw, dkw, tkw = {}, {}, {}
    for key, value in raw.items():
        if key in _MODEL_KEYS:
            field, typ = _MODEL_KEYS[key]
            mkw[field] = _coerce(key, value, typ)
        elif key in _DARTBOARD_KEYS:
            field, typ = _DARTBOARD_KEYS[key]
            dkw[field] = _coerce(key, value, typ)
        elif key in _TRAIN_KEYS:
            field, typ = _TRAIN_KEYS[key]
            tkw[field] = _coerce(key, value, typ)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if dkw:
        mkw["dartboard"] = DartboardSpec(**dkw)
    return mkw, tkw


def load_synth_config(path: str | None) -> data_mod.SynthConfig:
    raw = _read_toml(path)
    kw = {}
    for key, value in raw.items():
        if key not in _SYNTH_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kw[key] = value
    return data_mod.SynthConfig(**kw)


def _data_hash(data_dir: str) -> str:
    h = hashlib.sha256()
    for name in ("stations.csv", "readings.csv"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            with open(path, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


def write_manifest(out_path: str, config: dict, seed, data_dir: str | None):
    payload = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "config": config,
        "config_hash": hashlib.sha256(payload.encode()).hexdigest(),
        "seed": seed,
        "data_hash": _data_hash(data_dir) if data_dir else None,
    }
    with open(out_path + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=str)


def _load_dataset(data_dir: str) -> data_mod.Dataset:
    ds = data_mod.load_csv(os.path.join(data_dir, "stations.csv"),
                           os.path.join(data_dir, "readings.csv"))
    return data_mod.normalize(ds)


# -- commands -----------------------------------------------------------------------


def cmd_gen_data(args):
    cfg = load_synth_config(args.config)
    ds = data_mod.generate_synthetic(cfg)
    data_mod.write_dataset(ds, args.out, meta=data_mod.synth_meta(cfg))
    write_manifest(os.path.join(args.out, "data"), dataclasses.asdict(cfg), cfg.seed, args.out)
    print(f"wrote {ds.n} stations x {ds.steps} steps to {args.out}")


def cmd_train(args):
    mkw, tkw = load_model_train_config(args.config)
    if args.seed is not None:
        tkw["seed"] = args.seed
    ds = _load_dataset(args.data)
    mkw.setdefault("channels", ds.channels)
    mcfg = mdl.ModelConfig(**mkw)
    tcfg = train_mod.TrainConfig(**tkw)
    effective = {"model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg)}
    print(f"effective config: {json.dumps(effective, default=str)}")
    write_manifest(args.out, effective, tcfg.seed, args.data)
    result = train_mod.train_loop(
        ds, mcfg, tcfg, ckpt_path=args.out, log_path=args.out + ".log.jsonl",
        log_fn=lambda r: print(
            f"epoch {r['epoch']:3d}  loss {r['loss']:.4f}  "
            f"val_mae {r['val_mae']:.3f}  {r['seconds']:.1f}s"))
    print(f"best val MAE {result['best_val_mae']:.4f} after {result['epochs_run']} epochs")


def _build_eval_model(ckpt_path: str, ds: data_mod.Dataset):
    params, mcfg, n_ckpt, checksum = mdl.load_checkpoint(ckpt_path)
    mdl.check_station_match(n_ckpt, checksum, ds.stations)
    proj = mdl.build_model_projection(ds.stations, mcfg)
    return params, mcfg, proj


def cmd_eval(args):
    ds = _load_dataset(args.data)
    params, mcfg, proj = _build_eval_model(args.ckpt, ds)
    predictors = [(MODEL_NAME, train_mod.model_predictor(params, mcfg, proj, ds))]
    if args.baselines:
        predictors.append(("knn", baseline_predictor(ds, "knn", k=5)))
        predictors.append(("idw", baseline_predictor(ds, "idw", power=2.0)))
    rows = []
    for name, predict in predictors:
        m = train_mod.evaluate(predict, ds, mcfg.history, args.ratio, args.seed)
        rows.append([name, args.ratio, f"{m.mae:.6f}", f"{m.rmse:.6f}", f"{m.mape:.6f}"])
        print(f"{name}: MAE {m.mae:.3f}  RMSE {m.rmse:.3f}  MAPE {m.mape:.3f}")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "ratio", "mae", "rmse", "mape"])
        w.writerows(rows)
    write_manifest(args.out, {"ckpt": args.ckpt, "ratio": args.ratio}, args.seed, args.data)


def cmd_infer(args):
    try:
        lat0, lon0, lat1, lon1, step = (float(v) for v in args.grid.split(","))
    except ValueError:
        raise ConfigError(f"--grid expects lat0,lon0,lat1,lon1,step, got {args.grid!r}") from None
    ds = _load_dataset(args.data)
    params, mcfg, n_ckpt, checksum = mdl.load_checkpoint(args.ckpt)
    mdl.check_station_match(n_ckpt, checksum, ds.stations)

    glat, glon = np.meshgrid(np.arange(lat0, lat1 + 1e-9, step),
                             np.arange(lon0, lon1 + 1e-9, step), indexing="ij")
    glat, glon = glat.ravel(), glon.ravel()
    n_real, n_grid = ds.n, glat.size
    ext = StationSet(
        ds.stations.ids + tuple(f"grid{i}" for i in range(n_grid)),
        np.concatenate([ds.stations.lat, glat]),
        np.concatenate([ds.stations.lon, glon]),
    )
    proj = mdl.build_model_projection(ext, mcfg)
    params = mdl.extend_params_for_pseudo_nodes(params, mcfg, n_real, ext.n)

    t = args.time if args.time is not None else ds.steps - 1
    batch = ds.batch(np.array([t]), mcfg.history)
    pad = lambda a, fill: np.concatenate(
        [a, np.full(a.shape[:1] + (n_grid,) + a.shape[2:], fill, dtype=a.dtype)], axis=1)
    ext_batch = {k: pad(v, 0) for k, v in batch.items()}
    mask = np.zeros(ext.n, dtype=bool)
    mask[n_real:] = True
    out = mdl.forward(ext_batch, mask, params, mcfg, proj)
    pm = ds.norm.denormalize(out.data[0, n_real:, ds.cont_names.index("pm25")], "pm25")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lat", "lon", "pm25"])
        for la, lo, v in zip(glat, glon, pm):
            w.writerow([f"{la:.5f}", f"{lo:.5f}", f"{v:.4f}"])
    write_manifest(args.out, {"ckpt": args.ckpt, "grid": args.grid, "time": t}, None, args.data)
    print(f"wrote {n_grid} grid predictions to {args.out}")


def cmd_bench(args):
    ns = [int(v) for v in args.n.split(",")]
    kinds = args.kernel.split(",") if args.kernel else ["local", "dense", "spectral"]
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kernel", "n", "seconds"])
        for kind in kinds:
            results = bench_mod.time_kernel(kind, ns, e=args.e, reps=args.reps, seed=args.seed)
            for n, t in results:
                w.writerow([kind, n, f"{t:.6f}"])
            print(f"{kind}: exponent {bench_mod.fit_exponent(results):.3f}")
    write_manifest(args.out, vars(args) | {"func": None}, args.seed, None)


def cmd_sweep(args):
    values = [float(v) for v in args.values.split(",")]
    mkw, tkw = load_model_train_config(args.config)
    if args.seed is not None:
        tkw["seed"] = args.seed
    ds = _load_dataset(args.data)
    mkw.setdefault("channels", ds.channels)
    key = args.param
    if key not in _MODEL_KEYS:
        raise ConfigError(f"--param must be a model config key, got {key!r}")
    field, typ = _MODEL_KEYS[key]
    rows = []
    for value in values:
        mkw[field] = _coerce(key, value if typ is float else int(value), typ)
        mcfg = mdl.ModelConfig(**mkw)
        tcfg = train_mod.TrainConfig(**tkw)
        result = train_mod.train_loop(ds, mcfg, tcfg)
        proj = mdl.build_model_projection(ds.stations, mcfg)
        predict = train_mod.model_predictor(result["params"], mcfg, proj, ds)
        m = train_mod.evaluate(predict, ds, mcfg.history, args.ratio, tcfg.seed)
        rows.append([key, value, f"{m.mae:.6f}"])
        print(f"{key}={value}: test MAE {m.mae:.4f}")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["param", "value", "mae"])
        w.writerows(rows)
    write_manifest(args.out, {"param": key, "values": values}, tkw.get("seed", 0), args.data)


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airinfer",
                                description="Air quality inference from sparse stations")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", help="synthetic-data TOML config")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="model/train TOML config")
    t.add_argument("--out", required=True, help="checkpoint path (.ardr)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--ratio", type=float, default=0.25, choices=None)
    e.add_argument("--baselines", action="store_true", help="also score KNN and IDW")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="metrics.csv")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict on a lat/lon grid")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--grid", required=True, help="lat0,lon0,lat1,lon1,step")
    i.add_argument("--time", type=int, help="timestep index (default: last)")
    i.add_argument("--out", default="grid.csv")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="time spatial kernels and fit scaling exponents")
    b.add_argument("--n", default="256,512,1024,2048")
    b.add_argument("--kernel", help="comma list of local,dense,spectral (default: all)")
    b.add_argument("--e", type=int, default=32, help="hidden size E")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="hyperparameter sweep over one config key")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--ratio", type=float, default=0.75)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="sweep.csv")
    s.set_defaults(func=cmd_sweep)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
