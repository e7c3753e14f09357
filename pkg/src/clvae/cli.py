"""Command-line entry point: train, infer, changepoint, baseline, evaluate, synth.

Exit status is 0 on success, 2 on usage errors and 1 when a run fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import changepoint as cp
from . import config as cfgmod
from .baselines import run_baseline
from .inference import binarize, change_map, export_change_products
from .metrics import aggregate, score, write_report_json, write_table_csv
from .model import load_checkpoint, save_checkpoint
from .patching import stack_pre_series
from .raster_io import load_mask, load_raster, load_tile, save_raster
from .synthdata import SceneSpec, generate, write_scene

logger = logging.getLogger("clvae")

RASTER_SUFFIXES = (".tif", ".tiff", ".grid")


def _paths(csv: str) -> list[Path]:
    return [Path(p) for p in csv.split(",") if p]


def _dir_tiles(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in RASTER_SUFFIXES
                  and not p.name.startswith("gt_"))


def _load_tiles(paths) -> list:
    tiles = [load_tile(p) for p in paths]
    if all(t.acquisition_date is not None for t in tiles):
        tiles.sort(key=lambda t: t.acquisition_date)
    return tiles


def _resolve(args) -> cfgmod.Config:
    overrides = {
        "run": {"seed": args.seed, "deterministic": args.deterministic, "workers": args.workers},
        "schedule": {"max_epochs": getattr(args, "epochs", None),
                     "batch_size": getattr(args, "batch_size", None),
                     "pairs_per_epoch": getattr(args, "pairs_per_epoch", None)},
        "model": {"timesteps": getattr(args, "timesteps", None)},
    }
    cfg = cfgmod.load_config(args.config, overrides)
    if cfg.run.workers < 1:
        raise cfgmod.ConfigError("workers must be >= 1")
    torch.set_num_threads(1 if cfg.run.deterministic else cfg.run.workers)
    torch.manual_seed(cfg.run.seed)
    np.random.seed(cfg.run.seed)
    logger.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    logger.info("seed: %d", cfg.run.seed)
    return cfg


# -- subcommands ------------------------------------------------------------------

def cmd_train(args) -> int:
    from .plotting import plot_loss_history
    from .training import train

    cfg = _resolve(args)
    T = cfg.model.timesteps
    paths = _dir_tiles(args.data) if args.data else _paths(args.pre)
    tiles = _load_tiles(paths)
    if len(tiles) < T:
        raise ValueError(f"need at least {T} pre-event images, got {len(tiles)}")
    # consecutive windows of length T
    stacks = [stack_pre_series(tiles[i:i + T], T) for i in range(len(tiles) - T + 1)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(stacks, cfg.model, cfg.schedule, cfg.loss, seed=cfg.run.seed,
                   history_csv=out / "loss_history.csv", deterministic=cfg.run.deterministic)
    print(f"trainable parameters: {result.parameter_count}")
    save_checkpoint(result.model, out / "model.ckpt",
                    {"seed": cfg.run.seed, "epochs": len(result.history)})
    cfgmod.write_config(cfg, out / "config.ini")
    plot_loss_history(result.history, out / "loss_history.png")
    logger.info("wrote %s", out)
    return 0


def cmd_infer(args) -> int:
    from .plotting import plot_change_products

    _resolve(args)
    model, _ = load_checkpoint(args.model)
    pre = _load_tiles(_paths(args.pre))
    post = load_tile(args.post)
    cmap = change_map(pre, post, model, args.kind, args.batch_size)
    mask = binarize(cmap, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, bounds = load_raster(args.post)
    paths = export_change_products(cmap, mask, out, bounds, fmt=args.format)
    gt = load_mask(args.gt) if args.gt else None
    report = {"kind": cmap.kind.value, "threshold": mask.threshold,
              "changed_percent": cp.percentage_change(mask)}
    if gt is not None:
        report["metrics"] = score(mask.mask, gt).to_dict()
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    plot_change_products(cmap.values, mask.mask, out / "change_products.png",
                         title=f"{cmap.kind.value} > {mask.threshold:g}",
                         gt=None if gt is None else gt.labels)
    logger.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_changepoint(args) -> int:
    from .plotting import plot_change_points

    _resolve(args)
    model, _ = load_checkpoint(args.model)
    ref = load_tile(args.ref)
    window = _load_tiles(_dir_tiles(args.window))
    result = cp.detect_change_point(ref, window, model, args.kind, args.mode, args.threshold,
                                    batch_size=args.batch_size)
    out = Path(args.out)
    cp.write_report(result, out)
    plot_change_points(result, out.with_suffix(".png"))
    print(f"change point: {result.change_point.isoformat() if result.change_point else 'none'}")
    return 0


def cmd_baseline(args) -> int:
    from .plotting import plot_change_products, save_mask_png

    _resolve(args)
    pre, post = load_tile(args.pre), load_tile(args.post)
    values, mask, t = run_baseline(args.method, pre, post, args.window, args.channel_policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, bounds = load_raster(args.post)
    meta = {"method": args.method, "threshold": t.value, "degenerate": t.degenerate}
    save_raster(values.astype(np.float32), out / f"change_map{args.format}", bounds, meta)
    save_raster(mask.astype(np.uint8), out / f"change_mask{args.format}", bounds, meta)
    save_mask_png(mask, out / "change_mask.png")
    (out / "report.json").write_text(json.dumps(meta, indent=2) + "\n")
    plot_change_products(values, mask, out / "change_products.png", title=args.method)
    return 0


def cmd_evaluate(args) -> int:
    _resolve(args)
    preds, gts = _paths(args.pred), _paths(args.gt)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground-truth masks")
    rows = {}
    for p, g in zip(preds, gts):
        grid, _, _ = load_raster(p)
        rows[p.stem] = score(grid[0] > 0, load_mask(g))
    out = Path(args.out)
    if len(rows) == 1:
        write_report_json(next(iter(rows.values())), out)
    else:
        write_report_json(aggregate(list(rows.values())), out)
    write_table_csv(rows, out.with_suffix(".csv"))
    for site, r in rows.items():
        print(f"{site}: P={r.precision:.4f} R={r.recall:.4f} F1={r.f1:.4f} IoU={r.iou:.4f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    spec = SceneSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = cfg.run.seed
    written = write_scene(generate(spec), args.out, args.format)
    print(f"wrote {len(written)} rasters to {args.out}")
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [model] [loss] [schedule] [run] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="single-threaded bit-exact mode")
    common.add_argument("--workers", type=int, help="CPU threads when not deterministic")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    kinds = ["kld", "jsd", "ed", "cosd"]
    formats = [".tif", ".grid"]

    p = sub.add_parser("train", parents=[common], help="train a model on pre-event tiles")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of dated tiles")
    src.add_argument("--pre", help="comma-separated tile paths")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--pairs-per-epoch", type=int)
    p.add_argument("--timesteps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="change map for one post-event image")
    p.add_argument("--model", required=True)
    p.add_argument("--pre", required=True, help="comma-separated pre-event tiles, oldest first")
    p.add_argument("--post", required=True)
    p.add_argument("--kind", choices=kinds, default="cosd")
    p.add_argument("--threshold", type=float, help="defaults to -0.9 for cosd, 0 otherwise")
    p.add_argument("--gt", help="optional ground-truth mask for scoring")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--format", choices=formats, default=".tif")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("changepoint", parents=[common], help="first date of significant change")
    p.add_argument("--model", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--window", required=True, help="directory of dated tiles")
    p.add_argument("--mode", choices=["median", "fixed"], default="fixed")
    p.add_argument("--threshold", type=float, default=cp.DEFAULT_FIXED_THRESHOLD,
                   help="percent, used in fixed mode")
    p.add_argument("--kind", choices=kinds, default="cosd")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_changepoint)

    p = sub.add_parser("baseline", parents=[common], help="log-ratio or CVA change map")
    p.add_argument("--method", required=True, choices=["logratio-otsu", "logratio-yen", "cva"])
    p.add_argument("--pre", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--window", type=int, default=5, help="Lee filter window")
    p.add_argument("--channel-policy", choices=["vv", "vh", "mean_abs"], default="mean_abs")
    p.add_argument("--format", choices=formats, default=".tif")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[common], help="score binary maps against masks")
    p.add_argument("--pred", required=True, help="comma-separated binary rasters")
    p.add_argument("--gt", required=True, help="comma-separated masks, same order")
    p.add_argument("--out", required=True, help="JSON report path; a CSV table is written beside it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic flood scene")
    p.add_argument("--spec", required=True, help="SceneSpec JSON")
    p.add_argument("--format", choices=formats, default=".grid")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
