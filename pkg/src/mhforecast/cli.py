"""Command-line entry point: train, eval, forecast, ablate, synth.

Configuration precedence is defaults < JSON config file < command-line
flags. Exit codes: 0 success, 2 configuration/usage errors, 3 data or IO
errors, 4 numeric failures. The MHF_THREADS environment variable caps
parallelism of ablation sweeps (default 1, serial).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import report as reportfmt
from .data import (
    eval_windows_arrays,
    load_csv,
    read_matrix_csv,
    read_metadata,
    save_csv,
    synth_bimodal,
    synth_scale_imbalance,
    synth_spiky,
    write_metadata,
)
from .errors import ConfigError, ContractError, DataError, NumericError, ParseError, ShapeError
from .metrics import count_flops, evaluate_windows, linear_cka, measure_latency
from .model import ModelConfig, forward, load_checkpoint, save_checkpoint
from .normalization import NormConfig
from .training import TrainConfig, fit

NORM_TOKENS = {
    "sin": "sin",
    "instance": "instance",
    "mean-scaler": "mean-scaler",
    "identity": "identity",
    "batch": "batch-stat",
    "layer": "layer-stat",
    "group": "group-stat",
}

DEFAULTS = {
    "L": 24,
    "H": 24,
    "K": 16,
    "head_hidden": 64,
    "init_scale": 0.1,
    "norm": "sin",
    "trim_ratio": 0.1,
    "var_epsilon": 1e-5,
    "group_count": 1,
    "epsilon": 0.1,
    "beta": 0.5,
    "lr": 1e-3,
    "epochs": 200,
    "batches_per_epoch": 30,
    "batch_size": 200,
    "patience": 10,
    "seeds": [3141, 3142, 3143, 42, 43],
    "data": None,
    "out": "runs",
    "split": "test",
    "axis": "norm-kind",
    "values": None,
    "crps_raw": False,
    "crps_weighted": False,
    "plot": False,
}

FLAG_KEYS = [k for k in DEFAULTS if k not in ("data", "out", "seeds", "values")]


def _merged_config(args) -> dict:
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        for key, value in file_cfg.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config field {key!r} in {path}")
            cfg[key] = value
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            cfg[key] = flag
    if getattr(args, "seed", None):
        cfg["seeds"] = list(args.seed)
    return cfg


def _norm_config(cfg: dict) -> NormConfig:
    token = cfg["norm"]
    if token not in NORM_TOKENS:
        raise ConfigError(f"unknown norm {token!r}; valid: {sorted(NORM_TOKENS)}")
    return NormConfig(
        kind=NORM_TOKENS[token],
        trim_ratio=cfg["trim_ratio"],
        var_epsilon=cfg["var_epsilon"],
        group_count=cfg["group_count"],
    )


def _model_config(cfg: dict, d: int, seed: int) -> ModelConfig:
    return ModelConfig(
        L=cfg["L"],
        H=cfg["H"],
        D=d,
        K=cfg["K"],
        head_hidden=cfg["head_hidden"],
        norm=_norm_config(cfg),
        init_seed=seed,
        init_scale=cfg["init_scale"],
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        relax_epsilon=cfg["epsilon"],
        beta=cfg["beta"],
        learning_rate=cfg["lr"],
        epochs=cfg["epochs"],
        batches_per_epoch=cfg["batches_per_epoch"],
        batch_size=cfg["batch_size"],
        patience=cfg["patience"],
        seed=seed,
    )


def _load_dataset(cfg: dict):
    path = cfg["data"]
    if not path:
        raise ConfigError("a dataset is required; pass --data PATH")
    sidecar = Path(str(path) + ".meta.txt")
    train_end = val_end = None
    if sidecar.exists():
        meta = read_metadata(sidecar)
        train_end = meta.get("train_end")
        val_end = meta.get("val_end")
    return load_csv(path, train_end=train_end, val_end=val_end)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _epochs_csv(path, rep) -> None:
    k = len(rep.epochs[0].utilization) if rep.epochs else 0
    header = ["epoch", "rwta_loss", "score_loss", "val_distortion", "entropy"]
    header += [f"util_{i}" for i in range(k)]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, e in enumerate(rep.epochs, start=1):
            row = [str(i), repr(e.rwta_loss), repr(e.score_loss), repr(e.val_distortion), repr(e.entropy)]
            row += [str(int(c)) for c in e.utilization]
            fh.write(",".join(row) + "\n")


def _config_echo(cfg: dict) -> dict:
    return {key: cfg[key] for key in sorted(DEFAULTS) if cfg[key] is not None}


def cmd_train(args) -> int:
    cfg = _merged_config(args)
    ds = _load_dataset(cfg)
    seed = int(cfg["seeds"][0])
    mcfg = _model_config(cfg, ds.D, seed)
    tcfg = _train_config(cfg, seed)
    params, rep = fit(ds, mcfg, tcfg, log=print)
    out = _out_dir(cfg)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(ckpt, params, mcfg)
    _epochs_csv(out / "epochs.csv", rep)
    reportfmt.write_report(
        out / "train_report.txt",
        {"config": _config_echo(cfg), "seed": seed, "train_report": rep.to_dict()},
    )
    print(f"checkpoint: {ckpt}")
    print(f"report: {out / 'train_report.txt'}")
    print(f"epochs: {out / 'epochs.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _merged_config(args)
    params, mcfg = load_checkpoint(args.checkpoint)
    ds = _load_dataset(cfg)
    if ds.D != mcfg.D:
        raise ConfigError(f"checkpoint has D={mcfg.D} but dataset has D={ds.D}")
    x, y, _ = eval_windows_arrays(ds, mcfg.L, mcfg.H, cfg["split"])
    res, _ = evaluate_windows(params, mcfg, x, y, confidence_weighted=cfg["crps_weighted"])
    flops = count_flops(mcfg)
    latency = measure_latency(params, mcfg, x[: min(64, x.shape[0])], repeats=5)
    out = _out_dir(cfg)
    tree = {
        "checkpoint": str(args.checkpoint),
        "data": str(cfg["data"]),
        "split": cfg["split"],
        "K": mcfg.K,
        "flops": flops,
        "latency_seconds": latency,
        "eval": res.to_dict(),
    }
    reportfmt.write_report(out / "eval_report.txt", tree)
    headline = res.crps_sum_raw if cfg["crps_raw"] else res.crps_sum
    print(f"n_windows: {res.n_windows}")
    print(f"distortion: {res.distortion!r}")
    print(f"crps_sum{'_raw' if cfg['crps_raw'] else ''}: {headline!r}")
    print(f"flops: {flops}")
    print(f"latency_seconds: {latency!r}")
    print(f"report: {out / 'eval_report.txt'}")
    return 0


def cmd_forecast(args) -> int:
    cfg = _merged_config(args)
    params, mcfg = load_checkpoint(args.checkpoint)
    ctx = read_matrix_csv(args.context)
    if ctx.shape != (mcfg.L, mcfg.D):
        raise ConfigError(
            f"context must be {mcfg.L} rows x {mcfg.D} cols, got {ctx.shape[0]} x {ctx.shape[1]}"
        )
    fs = forward(ctx, params, mcfg)
    out = _out_dir(cfg)
    path = out / "forecast.csv"
    with open(path, "w", newline="\n") as fh:
        cols = ",".join(f"ch_{d}" for d in range(mcfg.D))
        fh.write(f"hypothesis,step,{cols},confidence\n")
        for k, hyp in enumerate(fs.hypotheses):
            conf = repr(float(fs.confidences[k]))
            for t in range(mcfg.H):
                vals = ",".join(repr(float(v)) for v in hyp[t])
                fh.write(f"{k},{t},{vals},{conf}\n")
    print(f"forecast: {path}")
    if cfg["plot"]:
        from .svgplot import write_forecast_chart

        svg = out / "forecast.svg"
        write_forecast_chart(svg, ctx, np.stack(fs.hypotheses))
        print(f"plot: {svg}")
    return 0


AXIS_DEFAULTS = {
    "norm-kind": ["sin", "batch", "layer", "group"],
    "K-sweep": [1, 2, 4, 8, 16],
    "epsilon-sweep": [0.0, 0.05, 0.1, 0.2, 0.5],
}


def _parse_axis_values(axis: str, raw) -> list:
    if raw is None:
        return AXIS_DEFAULTS[axis]
    if isinstance(raw, str):
        raw = [v.strip() for v in raw.split(",") if v.strip()]
    if axis == "norm-kind":
        return [str(v) for v in raw]
    if axis == "K-sweep":
        return [int(v) for v in raw]
    return [float(v) for v in raw]


def _ablate_one(ds, cfg, axis, value, seed):
    run_cfg = dict(cfg)
    if axis == "norm-kind":
        run_cfg["norm"] = value
    elif axis == "K-sweep":
        run_cfg["K"] = int(value)
        if int(value) == 1 and run_cfg["epsilon"] > 0:
            run_cfg["epsilon"] = 0.0  # single head cannot split the relaxation
    else:
        run_cfg["epsilon"] = float(value)
        if cfg["K"] == 1 and float(value) > 0:
            raise ConfigError("epsilon-sweep with K=1 requires epsilon 0")
    mcfg = _model_config(run_cfg, ds.D, seed)
    tcfg = _train_config(run_cfg, seed)
    params, rep = fit(ds, mcfg, tcfg)
    x, y, _ = eval_windows_arrays(ds, mcfg.L, mcfg.H, "test")
    res, latents = evaluate_windows(params, mcfg, x, y)
    n_shared = min(64, latents.shape[0])
    feats = latents[:n_shared].reshape(n_shared, -1)
    return {
        "distortion": res.distortion,
        "crps_sum": res.crps_sum,
        "entropy": rep.final_entropy,
        "latent": feats,
    }


def _mean_std(vals) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=np.float64)
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return float(vals.mean()), std


def cmd_ablate(args) -> int:
    cfg = _merged_config(args)
    axis = cfg["axis"]
    if axis not in AXIS_DEFAULTS:
        raise ConfigError(f"unknown axis {axis!r}; valid: {sorted(AXIS_DEFAULTS)}")
    values = _parse_axis_values(axis, cfg["values"])
    seeds = [int(s) for s in cfg["seeds"]]
    ds = _load_dataset(cfg)
    jobs = [(value, seed) for value in values for seed in seeds]
    workers = _thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda js: _ablate_one(ds, cfg, axis, *js), jobs))
    else:
        results = [_ablate_one(ds, cfg, axis, value, seed) for value, seed in jobs]
    by_value = {
        value: results[i * len(seeds) : (i + 1) * len(seeds)] for i, value in enumerate(values)
    }

    out = _out_dir(cfg)
    table = out / "ablation.csv"
    with open(table, "w", newline="\n") as fh:
        fh.write(
            "axis,value,seeds,distortion_mean,distortion_std,"
            "crps_sum_mean,crps_sum_std,entropy_mean,entropy_std\n"
        )
        for value in values:
            runs = by_value[value]
            dm, dsd = _mean_std([r["distortion"] for r in runs])
            cm, csd = _mean_std([r["crps_sum"] for r in runs])
            em, esd = _mean_std([r["entropy"] for r in runs])
            seed_list = ";".join(str(s) for s in seeds)
            fh.write(
                f"{axis},{value},{seed_list},{dm!r},{dsd!r},{cm!r},{csd!r},{em!r},{esd!r}\n"
            )
    print(f"table: {table}")

    if axis == "norm-kind":
        cka = out / "cka_matrix.csv"
        with open(cka, "w", newline="\n") as fh:
            fh.write("value," + ",".join(str(v) for v in values) + "\n")
            for va in values:
                row = [str(va)]
                for vb in values:
                    sims = [
                        linear_cka(ra["latent"], rb["latent"])
                        for ra, rb in zip(by_value[va], by_value[vb])
                    ]
                    row.append(repr(float(np.mean(sims))))
                fh.write(",".join(row) + "\n")
        print(f"cka: {cka}")
    return 0


def cmd_synth(args) -> int:
    cfg = _merged_config(args)
    seed = int(cfg["seeds"][0])
    if args.kind == "bimodal":
        ds = synth_bimodal(args.T, seed, segment_len=args.segment)
    elif args.kind == "scale-imbalance":
        scales = [float(v) for v in args.scales.split(",")]
        ds = synth_scale_imbalance(args.T, scales, seed)
    else:
        ds = synth_spiky(args.T, args.spike_prob, args.spike_mag, seed, period=args.period)
    out_path = Path(args.out_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds.values, out_path)
    meta = dict(ds.meta)
    meta["train_end"] = ds.train_end
    meta["val_end"] = ds.val_end
    write_metadata(str(out_path) + ".meta.txt", meta)
    std = ds.values.std(axis=0)
    print(f"wrote {out_path} and {out_path}.meta.txt")
    print(f"T: {ds.T}")
    print(f"D: {ds.D}")
    print("per_channel_std: " + ",".join(repr(float(v)) for v in std))
    return 0


def _thread_cap() -> int:
    raw = os.environ.get("MHF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MHF_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MHF_THREADS must be >= 1, got {n}")
    return n


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", help="dataset CSV path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--L", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--norm", choices=sorted(NORM_TOKENS))
    p.add_argument("--trim-ratio", dest="trim_ratio", type=float)
    p.add_argument("--var-epsilon", dest="var_epsilon", type=float)
    p.add_argument("--group-count", dest="group_count", type=int)
    p.add_argument("--epsilon", type=float, help="winner-takes-all relaxation")
    p.add_argument("--beta", type=float, help="confidence loss weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + reports")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--crps-raw", dest="crps_raw", action="store_true", default=None)
    p.add_argument("--crps-weighted", dest="crps_weighted", action="store_true", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="forecast from a context window CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True, help="CSV with exactly L rows, D cols")
    p.add_argument("--plot", action="store_true", default=None)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("ablate", help="sweep one axis over the seed list")
    _add_common(p)
    p.add_argument("--axis", choices=sorted(AXIS_DEFAULTS))
    p.add_argument("--values", help="comma-separated axis values")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV + sidecar")
    p.add_argument("--kind", required=True, choices=["bimodal", "scale-imbalance", "spiky"])
    p.add_argument("--T", type=int, default=5000)
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--scales", default="1,1000")
    p.add_argument("--spike-prob", dest="spike_prob", type=float, default=0.05)
    p.add_argument("--spike-mag", dest="spike_mag", type=float, default=5.0)
    p.add_argument("--segment", type=int, default=32)
    p.add_argument("--period", type=int, default=24)
    p.add_argument("out_path", help="output CSV path")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except (ConfigError, ShapeError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ParseError, DataError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())
