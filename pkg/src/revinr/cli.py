"""Command-line entry point: ``revinr {train,reconstruct,evaluate,lcp,derive-fields,info}``.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure,
5 contract violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .estimators import load_model, make_model
from .exceptions import ConfigError, RevInrError, UsageError, VolumeIOError
from .lcp import lcp_field
from .metrics import EvalReport, ablation_compare, evaluate
from .models import ModelConfig, model_size_kb
from .nn import load_checkpoint, parameter_count
from .volume import (
    VolumeGrid,
    gradient_magnitude,
    interpolation_error_field,
    load_raw,
    local_variance,
    read_volume,
    sidecar_path,
    write_volume,
)

log = logging.getLogger("revinr")

TRAIN_DEFAULTS = {
    "variant": "rev",
    "volume": None,
    "dims": None,
    "dtype": "f32le",
    "spacing": [1.0, 1.0, 1.0],
    "out": "run",
    "epochs": 300,
    "batch_size": 4096,
    "seed": 0,
    "lr": 5e-5,
    "lr_decay": 0.8,
    "lr_step": 15,
    "width": None,
    "blocks": None,
    "dropout_rate": 0.1,
    "mc_passes": 20,
    "decoders": 5,
    "decoder_blocks": 1,
    "loss_weights": {},
    "checkpoint_every": 0,
    "workers": 1,
    "deterministic": True,
}

def _triple(text, kind=int):
    parts = [p for p in str(text).replace("x", ",").split(",") if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return [kind(p) for p in parts]

def _float_triple(text):
    return _triple(text, float)

def _load_volume(path, dims=None, dtype="f32le", spacing=(1.0, 1.0, 1.0)) -> VolumeGrid:
    if path is None:
        raise ConfigError("a volume path is required")
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"volume not found: {path}")
    if sidecar_path(path).exists():
        vol = read_volume(path)
        if dims is not None and tuple(dims) != vol.dims:
            raise ConfigError(f"--dims {tuple(dims)} disagree with the sidecar of {path}: {vol.dims}")
        return vol
    if dims is None:
        raise ConfigError(f"--dims is required for headerless volume {path}")
    return load_raw(path, dims, dtype, spacing)

# --------------------------------------------------------------------------- train

def resolve_train_config(args) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise VolumeIOError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for name in ("lambda1", "lambda2", "lambda3", "delta"):
        value = getattr(args, name, None)
        if value is not None:
            cfg["loss_weights"] = {**cfg["loss_weights"], name: value}
    if cfg["epochs"] < 1:
        raise ConfigError(f"--epochs must be >= 1, got {cfg['epochs']}")
    return cfg

def _estimator_from_config(cfg):
    params = dict(
        width=cfg["width"], blocks=cfg["blocks"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"], lr_decay=cfg["lr_decay"], lr_step=cfg["lr_step"],
        loss_weights=cfg["loss_weights"] or None, random_state=cfg["seed"],
        deterministic=cfg["deterministic"], workers=cfg["workers"],
        checkpoint_every=cfg["checkpoint_every"], out_dir=cfg["out"],
    )
    if cfg["variant"] == "mcd":
        params.update(dropout_rate=cfg["dropout_rate"], mc_passes=cfg["mc_passes"])
    if cfg["variant"] == "rmd":
        params.update(decoders=cfg["decoders"], decoder_blocks=cfg["decoder_blocks"])
    return make_model(cfg["variant"], **params)

def cmd_train(args):
    cfg = resolve_train_config(args)
    volume = _load_volume(cfg["volume"], cfg["dims"], cfg["dtype"], cfg["spacing"])
    model = _estimator_from_config(cfg)
    # fail on bad hyperparameters before touching the output directory
    model._model_config()
    model._train_config()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**cfg, "dims": list(volume.dims), "loss_weights": asdict(model._loss_weights())}
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    model.fit_volume(volume)
    path = model.save(out / "model.bin")
    last = model.train_log_[-1]
    print(json.dumps({"checkpoint": str(path), "epochs": len(model.train_log_), "final_loss": last.total}))
    return 0

# --------------------------------------------------------------------------- reconstruct

def _target_dims(spec, trained):
    if spec is None:
        if not trained:
            raise ConfigError("checkpoint has no stored dims; pass --dims")
        return tuple(trained)
    spec = str(spec)
    if spec.endswith("x") and "," not in spec:
        factor = float(spec[:-1])
        return tuple(max(1, int(round(d * factor))) for d in trained)
    return tuple(_triple(spec))

def cmd_reconstruct(args):
    model = load_model(args.checkpoint)
    dims = _target_dims(args.dims, getattr(model, "dims_", None))
    available = {"mean"} if model.variant == "det" else {"mean", "au", "eu"}
    wanted = set(args.fields.split(",")) if args.fields else available
    if wanted - {"mean", "au", "eu"}:
        raise ConfigError(f"unknown fields {sorted(wanted - {'mean', 'au', 'eu'})}")
    if wanted - available:
        raise ConfigError("deterministic checkpoints only produce the mean field")
    field = model.reconstruct(dims)
    out = Path(args.out)
    written = {}
    for kind in ("mean", "au", "eu"):
        grid = getattr(field, kind)
        if grid is None or kind not in wanted:
            continue
        written[kind] = str(write_volume(out / f"{kind}.raw", grid, variant=model.variant, units="data" if kind == "mean" else "normalized^2"))
    summary = {"dims": list(dims), "seconds": field.seconds, "fields": written}
    out.mkdir(parents=True, exist_ok=True)
    (out / "reconstruct.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary))
    return 0

# --------------------------------------------------------------------------- evaluate

def _read_field(pred_dir, kind, required):
    path = Path(pred_dir) / f"{kind}.raw"
    if not path.exists():
        if required:
            raise UsageError(f"missing {kind} field: expected {path} (field_kind {kind!r})")
        return None
    return read_volume(path)

def cmd_evaluate(args):
    gt = _load_volume(args.gt, args.dims, args.dtype)
    mean = _read_field(args.pred, "mean", True)
    au = _read_field(args.pred, "au", False)
    eu = _read_field(args.pred, "eu", False)
    if mean.dims != gt.dims:
        raise UsageError(f"prediction dims {mean.dims} do not match ground truth {gt.dims}")
    norm = mean.norm
    if norm is not None:
        # uncertainties are in normalized units squared; score everything there
        gt_n = gt.with_data(norm.normalize(gt.data), norm=None)
        mean_n = mean.with_data(norm.normalize(mean.data), norm=None)
    else:
        gt_n, mean_n = gt, mean
    seconds = None
    summary_path = Path(args.pred) / "reconstruct.json"
    if summary_path.exists():
        seconds = json.loads(summary_path.read_text()).get("seconds")
    report = evaluate(
        gt_n, mean_n, au, eu,
        locvar_window=tuple(args.locvar_window), interp_factors=tuple(args.interp_factors),
        squared_error=args.squared_error, grad_mag=gradient_magnitude(gt_n) if au is not None else None,
        reconstruction_seconds=seconds,
    )
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json())
    if args.csv:
        csv_path = Path(args.csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "a") as fh:
            fh.write(report.csv_row(header=csv_path.stat().st_size == 0 if csv_path.exists() else True))
    if args.ablation_against:
        other = EvalReport.from_json(Path(args.ablation_against).read_text())
        print(json.dumps(ablation_compare(report, other), indent=2, sort_keys=True))
    else:
        print(report.to_json())
    return 0

# --------------------------------------------------------------------------- lcp

def cmd_lcp(args):
    mean = _read_field(args.pred, "mean", True)
    var = _read_field(args.pred, args.variance, True)
    var_data = var.data
    if mean.norm is not None:
        # variance fields are in normalized units; the isovalue is in data units
        var_data = var_data * mean.norm.scale**2
    out_grid = lcp_field(mean, var.with_data(var_data), args.isovalue)
    path = write_volume(Path(args.out), out_grid, isovalue=args.isovalue, variance_source=args.variance)
    print(json.dumps({"lcp": str(path), "dims": list(out_grid.dims), "isovalue": args.isovalue}))
    return 0

# --------------------------------------------------------------------------- derive-fields

def cmd_derive_fields(args):
    vol = _load_volume(args.volume, args.dims, args.dtype)
    out = Path(args.out)
    written = {}
    if args.gradient:
        written["gradient_magnitude"] = str(write_volume(out / "gradient_magnitude.raw", gradient_magnitude(vol)))
    if args.locvar_window:
        written["local_variance"] = str(
            write_volume(out / "local_variance.raw", local_variance(vol, args.locvar_window), window=args.locvar_window)
        )
    if args.interp_factors:
        written["interp_error"] = str(
            write_volume(out / "interp_error.raw", interpolation_error_field(vol, args.interp_factors), factors=args.interp_factors)
        )
    if not written:
        raise ConfigError("nothing to derive: pass --gradient, --locvar-window or --interp-factors")
    print(json.dumps(written))
    return 0

# --------------------------------------------------------------------------- info

def cmd_info(args):
    if args.path is None:
        if not args.variant:
            raise ConfigError("info needs a path or --variant")
        arch = ModelConfig(args.variant).architecture()
        info = {"kind": "variant", "variant": args.variant, "parameter_count": parameter_count(arch), "size_kb": model_size_kb(arch)}
        print(json.dumps(info, indent=2, sort_keys=True))
        return 0
    path = Path(args.path)
    if not path.exists():
        raise VolumeIOError(f"not found: {path}")
    if path.read_bytes()[:8] == b"REVINRCK":
        net, _, desc = load_checkpoint(path)
        info = {
            "kind": "checkpoint",
            "architecture": desc["architecture"],
            "parameter_count": parameter_count(net),
            "size_kb": model_size_kb(net),
            "extra": desc["extra"],
        }
    elif sidecar_path(path).exists():
        vol = read_volume(path)
        info = {
            "kind": "volume",
            "dims": list(vol.dims),
            "field_kind": vol.field_kind,
            "min": float(vol.data.min()),
            "max": float(vol.data.max()),
            "norm": vol.norm.to_dict() if vol.norm else None,
        }
    else:
        raise UsageError(f"{path} is neither a checkpoint nor a volume with a sidecar")
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0

# --------------------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="revinr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a raw volume")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--variant", choices=["det", "rev", "mcd", "rmd"])
    p.add_argument("--volume")
    p.add_argument("--dims", type=_triple)
    p.add_argument("--dtype", choices=["f32le", "f64le", "u8", "u16le"])
    p.add_argument("--spacing", type=_float_triple)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--lr-step", dest="lr_step", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--mc-passes", dest="mc_passes", type=int)
    p.add_argument("--decoders", type=int)
    p.add_argument("--decoder-blocks", dest="decoder_blocks", type=int)
    for name in ("lambda1", "lambda2", "lambda3", "delta"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--fast", dest="deterministic", action="store_const", const=False,
                   help="allow unordered gradient reduction across workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="evaluate a checkpoint on a grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", help="nx,ny,nz or a multiplier such as 2x")
    p.add_argument("--fields", help="comma-separated subset of mean,au,eu (default: all the variant has)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="metrics of reconstructed fields against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--dims", type=_triple)
    p.add_argument("--dtype", default="f32le", choices=["f32le", "f64le", "u8", "u16le"])
    p.add_argument("--pred", required=True, help="directory holding mean.raw, au.raw, eu.raw")
    p.add_argument("--locvar-window", dest="locvar_window", type=_triple, default=[2, 2, 2])
    p.add_argument("--interp-factors", dest="interp_factors", type=_triple, default=[4, 4, 4])
    p.add_argument("--squared-error", dest="squared_error", action="store_true")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--ablation-against", dest="ablation_against")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lcp", help="level-crossing probability field")
    p.add_argument("--pred", required=True)
    p.add_argument("--isovalue", type=float, required=True)
    p.add_argument("--variance", choices=["eu", "au"], default="eu")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lcp)

    p = sub.add_parser("derive-fields", help="gradient magnitude, local variance, interpolation error")
    p.add_argument("--volume", required=True)
    p.add_argument("--dims", type=_triple)
    p.add_argument("--dtype", default="f32le", choices=["f32le", "f64le", "u8", "u16le"])
    p.add_argument("--gradient", action="store_true")
    p.add_argument("--locvar-window", dest="locvar_window", type=_triple)
    p.add_argument("--interp-factors", dest="interp_factors", type=_triple)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive_fields)

    p = sub.add_parser("info", help="describe a checkpoint or volume")
    p.add_argument("path", nargs="?")
    p.add_argument("--variant", choices=["det", "rev", "mcd", "rmd"])
    p.set_defaults(func=cmd_info)
    return parser

def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RevInrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VolumeIOError.exit_code

if __name__ == "__main__":
    sys.exit(main())
