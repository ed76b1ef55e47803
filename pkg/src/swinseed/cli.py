"""Command line: ``swinseed {gen-data,train,eval,heatmap}``.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
4 checkpoint/config/data incompatibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cam import upsample_cam
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CLASS_NAMES,
    export_dataset,
    gen_dataset,
    gen_sample,
    load_dataset,
    quantize,
    stack,
    write_pgm,
    write_ppm,
)
from .encoder import ModelConfig
from .exceptions import ConfigurationError, DimensionError, GenerationError, IncompatibleError, NumericError
from .metrics import EvalReport, confusion, evaluate_map, iou_from_confusion, nearest_upsample, seed_mask_from_cams
from .model import forward
from .tensor import Tensor, no_grad
from .train import TrainConfig, history_csv, train

log = logging.getLogger("swinseed")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INCOMPATIBLE = 0, 2, 3, 4
MANIFEST_FILE = "run_manifest.json"
CHECKPOINT_FILE = "model.swtf"

# overlay hue per foreground class; background adds no tint
PALETTE = np.array([[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.4, 1.0], [1.0, 0.9, 0.1]])


class UsageError(Exception):
    """Bad flags or missing inputs (exit code 2)."""


def version_string():
    """``git describe``-style version; falls back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out_dir, command, config, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": version_string(),
        "duration_s": round(time.perf_counter() - started, 3),
    }
    path = Path(out_dir) / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _threads():
    raw = os.environ.get("SWT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise UsageError(f"SWT_THREADS must be an integer, got {raw!r}") from exc


def _load_samples(data_dir, split):
    data_dir = Path(data_dir)
    if not (data_dir / "manifest.txt").is_file():
        raise UsageError(f"no dataset manifest under {data_dir}")
    return load_dataset(data_dir, split)


# -- gen-data --------------------------------------------------------------
def cmd_gen_data(args):
    started = time.perf_counter()
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    out = Path(args.out)
    samples = gen_dataset(args.n, args.seed)
    lines = export_dataset(samples, out)
    files = [out / "manifest.txt"] + [out / part for line in lines for part in line.split()[2:4]]
    write_manifest(out, "gen-data", {"n": args.n, "seed": args.seed}, [], files, started)
    log.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


# -- train -----------------------------------------------------------------
def _read_config_file(path):
    """Split a JSON config into model and train overrides.

    Accepts ``{"model": {...}, "train": {...}}`` or a flat mapping whose keys
    are routed by field name.
    """
    if path is None:
        return {}, {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    if "model" in raw or "train" in raw:
        return dict(raw.get("model", {})), dict(raw.get("train", {}))
    model_keys = set(ModelConfig.__dataclass_fields__)
    train_keys = set(TrainConfig.__dataclass_fields__)
    unknown = set(raw) - model_keys - train_keys
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return (
        {k: v for k, v in raw.items() if k in model_keys},
        {k: v for k, v in raw.items() if k in train_keys},
    )


def build_configs(args, n_classes):
    model_over, train_over = _read_config_file(getattr(args, "config", None))
    for key, value in (("mode", args.mode), ("steps", args.steps), ("seed", args.seed)):
        if value is not None:
            train_over[key] = value
    if args.seed is not None:
        model_over["seed"] = args.seed
    model_over.setdefault("seed", train_over.get("seed", 0))
    model_over.setdefault("num_classes", n_classes)
    try:
        model_cfg = ModelConfig.from_dict(model_over).validate()
        train_cfg = TrainConfig.from_dict(train_over).validate()
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from exc
    if model_cfg.num_classes != n_classes:
        raise IncompatibleError(f"config has {model_cfg.num_classes} classes, data has {n_classes}")
    return model_cfg, train_cfg


def cmd_train(args):
    started = time.perf_counter()
    samples = _load_samples(args.data, args.split)
    if not samples:
        raise IncompatibleError(f"split {args.split!r} of {args.data} is empty")
    images, labels, _ = stack(samples)
    model_cfg, train_cfg = build_configs(args, labels.shape[1])
    if images.shape[2:] != (model_cfg.image_size, model_cfg.image_size):
        raise IncompatibleError(f"images are {images.shape[2:]}, config expects {model_cfg.image_size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model_cfg, train_cfg, images, labels, log_every=args.log_every)
    ckpt = out / CHECKPOINT_FILE
    save_checkpoint(ckpt, result.params, model_cfg, train_cfg)
    hist = out / "history.csv"
    hist.write_text(history_csv(result.history), encoding="utf-8")
    config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "split": args.split}
    write_manifest(out, "train", config, [args.data], [ckpt, ckpt.with_suffix(".json"), hist], started)
    log.info("trained %s for %d steps -> %s", train_cfg.mode, train_cfg.steps, ckpt)
    return EXIT_OK


# -- eval ------------------------------------------------------------------
def _eval_chunk(params, cfg, images, masks):
    with no_grad():
        out = forward(params, images, cfg)
    maps = out.seed_maps.data
    pred = seed_mask_from_cams(maps, masks.shape[-2], masks.shape[-1])
    return out.scores.data, confusion(pred, masks, cfg.num_classes + 1)


def evaluate_checkpoint(params, cfg, images, labels, masks, threads=1, chunk=16):
    """EvalReport over a split; chunks fan out over ``threads`` workers.

    Confusion counts are summed, so the result does not depend on the
    thread count.
    """
    starts = range(0, len(images), chunk)
    run = lambda s: _eval_chunk(params, cfg, images[s : s + chunk], masks[s : s + chunk])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    scores = np.concatenate([p[0] for p in parts])
    conf = sum(p[1] for p in parts)
    mean_ap, ap, excluded = evaluate_map(scores, labels)
    miou, iou = iou_from_confusion(conf)
    return EvalReport(mean_ap, ap, miou, iou, excluded)


def cmd_eval(args):
    started = time.perf_counter()
    params, cfg, meta = load_checkpoint(args.ckpt)
    samples = _load_samples(args.data, args.split)
    if not samples:
        raise IncompatibleError(f"split {args.split!r} of {args.data} is empty")
    images, labels, masks = stack(samples)
    if labels.shape[1] != cfg.num_classes:
        raise IncompatibleError(f"checkpoint has {cfg.num_classes} classes, data has {labels.shape[1]}")
    if images.shape[2:] != (cfg.image_size, cfg.image_size):
        raise IncompatibleError(f"images are {images.shape[2:]}, checkpoint expects {cfg.image_size}")
    report = evaluate_checkpoint(params, cfg, images, labels, masks, threads=_threads())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_text(CLASS_NAMES[: cfg.num_classes] if cfg.num_classes == len(CLASS_NAMES) else None)
    path = out / "report.txt"
    path.write_text(text, encoding="utf-8")
    config = {"model": cfg.to_dict(), "split": args.split}
    write_manifest(out, "eval", config, [args.ckpt, args.data], [path], started)
    sys.stdout.write(text)
    return EXIT_OK


# -- heatmap ---------------------------------------------------------------
def _find_sample(image_id, data_dir):
    if data_dir is None:
        return gen_sample(image_id)
    for sample in _load_samples(data_dir, "all"):
        if sample.id == image_id:
            return sample
    raise UsageError(f"image id {image_id} not found in {data_dir}")


def overlay(image, maps, alpha=0.5):
    """Blend per-class hues weighted by (C, H, W) maps onto a (3, H, W) image."""
    tint = np.einsum("chw,ck->khw", maps, PALETTE[: len(maps)])
    tint = np.clip(tint, 0.0, 1.0)
    return (1.0 - alpha) * image + alpha * tint


def cmd_heatmap(args):
    started = time.perf_counter()
    params, cfg, _ = load_checkpoint(args.ckpt)
    if args.which == "rcam" and "hff.fuse.weight" not in params:
        raise IncompatibleError("rcam maps need a v2 checkpoint")
    sample = _find_sample(args.image_id, args.data)
    if sample.image.shape[1:] != (cfg.image_size, cfg.image_size):
        raise IncompatibleError(f"image is {sample.image.shape[1:]}, checkpoint expects {cfg.image_size}")
    with no_grad():
        out = forward(params, Tensor(sample.image[None]), cfg, refine=args.which == "rcam")
    maps = (out.rcam if args.which == "rcam" else out.cam).data[0]
    h, w = sample.image.shape[1:]
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    names = list(CLASS_NAMES[: cfg.num_classes]) if cfg.num_classes <= len(CLASS_NAMES) else [
        f"class{i}" for i in range(cfg.num_classes)
    ]
    names.append("background")
    written = []
    for c, name in enumerate(names):
        channel = nearest_upsample(maps[c], h, w)
        path = dest / f"{args.which}_{sample.id:08d}_{c}_{name}.pgm"
        write_pgm(path, quantize(channel))
        written.append(path)
    smooth = upsample_cam(Tensor(maps[None, :-1]), h, w).data[0]
    blend = overlay(sample.image, np.clip(smooth, 0.0, 1.0))
    path = dest / f"{args.which}_{sample.id:08d}_overlay.ppm"
    write_ppm(path, quantize(blend))
    written.append(path)
    inputs = [args.ckpt] + ([args.data] if args.data else [])
    config = {"model": cfg.to_dict(), "image_id": args.image_id, "which": args.which}
    write_manifest(dest, "heatmap", config, inputs, written, started)
    return EXIT_OK


# -- entry point -----------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog="swinseed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="export a synthetic shapes dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a v1 or v2 model")
    p.add_argument("--mode", choices=("v1", "v2"), default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="train")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON with ModelConfig/TrainConfig fields")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mAP and seed mIoU of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export activation maps of one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image-id", type=int, required=True)
    p.add_argument("--which", choices=("cam", "rcam"), default="cam")
    p.add_argument("--data", default=None, help="dataset dir; without it the sample is regenerated from its id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IncompatibleError as exc:
        print(f"error: incompatible: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (UsageError, ConfigurationError, DimensionError, GenerationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
