"""Command-line entry point.

Subcommands: train, infer, pseudo, eval, ablate, visualize, make-synthetic.
Every command accepts --config FILE, repeatable --set key=value overrides,
--seed, --deterministic, and --out DIR, and writes a resolved-config snapshot
into the output directory so the run can be reproduced from the snapshot.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(bad data, divergence, missing artifacts).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .cams import normalize_cams
from .config import (
    RunConfig,
    apply_overrides,
    load_config_file,
    num_workers,
)
from .data import hwc_to_chw, load_dataset, load_image, load_mask, make_synthetic, resize_bilinear, save_mask
from .errors import ConfigError, PuzzleCAMError
from .inference import evaluate_miou, export_cams, import_cams, infer_cams, make_pseudo_labels
from .model import load_model
from .train import run_ablation, train
from .viz import save_overlay


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="config file of section.key = value lines")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="override run.seed")
    common.add_argument("--deterministic", action="store_true",
                        help="fixed-order single-worker execution with zeroed wall times")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")

    parser = Parser(prog="puzzlecam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a classifier with the puzzle losses")

    p_infer = sub.add_parser("infer", parents=[common], help="export per-image CAM files")
    p_infer.add_argument("--checkpoint", default=None, help="trained checkpoint path")

    p_pseudo = sub.add_parser("pseudo", parents=[common], help="turn CAM files into pseudo-label maps")
    p_pseudo.add_argument("--cams", default=None, help="directory of <id>.pcam files (default <out>/cams)")

    p_eval = sub.add_parser("eval", parents=[common], help="score label maps against dataset masks")
    p_eval.add_argument("--pred", required=True, help="directory of predicted <id>.png label maps")

    sub.add_parser("ablate", parents=[common], help="train and score the loss-toggle ablation rows")

    p_vis = sub.add_parser("visualize", parents=[common], help="write CAM heatmap overlays")
    p_vis.add_argument("--checkpoint", required=True, help="trained checkpoint path")
    p_vis.add_argument("images", nargs="+", help="input image paths")

    sub.add_parser("make-synthetic", parents=[common], help="generate the synthetic shapes dataset")
    return parser


def make_run_config(args) -> RunConfig:
    config = load_config_file(args.config) if args.config else RunConfig()
    apply_overrides(config, args.set)
    if args.seed is not None:
        config.values["run.seed"] = args.seed
    return config


def resolve_out(args) -> str:
    return args.out if args.out else os.path.join("runs", args.command.replace("-", "_"))


def resolve_dataset(config: RunConfig, out_dir: str):
    """Load data.root, or deterministically generate the synthetic set if unset."""
    root = config.get("data.root")
    if root:
        return load_dataset(root, config.get("data.split"))
    return make_synthetic(config.to_synthetic_config(), os.path.join(out_dir, "synthetic"))


def checkpoint_path_from(args, config: RunConfig) -> str:
    path = getattr(args, "checkpoint", None) or config.get("run.checkpoint")
    if not path:
        raise ConfigError("no checkpoint given (use --checkpoint or set run.checkpoint)")
    return path


def cmd_train(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    dataset = resolve_dataset(config, out_dir)
    outcome = train(config.to_train_config(out_dir, args.deterministic), dataset)
    print(f"checkpoint: {outcome.checkpoint_path}")
    print(f"log: {outcome.log_path}")
    return 0


def cmd_infer(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    num_workers()
    dataset = load_dataset(config.require_dataset_root(), config.get("data.split"))
    model = load_model(checkpoint_path_from(args, config))
    inference_config = config.to_inference_config()
    cam_dir = os.path.join(out_dir, "cams")
    os.makedirs(cam_dir, exist_ok=True)
    for item in dataset.items:
        stack = infer_cams(model, load_image(item.image_path), labels=item.labels,
                           config=inference_config)
        export_cams(stack, os.path.join(cam_dir, f"{item.image_id}.pcam"))
    print(f"wrote {len(dataset)} CAM files to {cam_dir}")
    return 0


def cmd_pseudo(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    num_workers()
    dataset = load_dataset(config.require_dataset_root(), config.get("data.split"))
    cam_dir = args.cams if args.cams else os.path.join(out_dir, "cams")
    pseudo_config = config.to_pseudo_config()
    label_dir = os.path.join(out_dir, "pseudo")
    os.makedirs(label_dir, exist_ok=True)
    for item in dataset.items:
        pcam_path = os.path.join(cam_dir, f"{item.image_id}.pcam")
        if not os.path.isfile(pcam_path):
            raise PuzzleCAMError(f"missing CAM file for image {item.image_id!r}: {pcam_path}")
        stack, _ = import_cams(pcam_path)
        save_mask(make_pseudo_labels(stack, pseudo_config), os.path.join(label_dir, f"{item.image_id}.png"))
    print(f"wrote {len(dataset)} pseudo-label maps to {label_dir}")
    return 0


def cmd_eval(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    dataset = load_dataset(config.require_dataset_root(), config.get("data.split"))
    preds = []
    gts = []
    ids = []
    for item in dataset.items:
        if item.mask_path is None:
            continue
        pred_path = os.path.join(args.pred, f"{item.image_id}.png")
        if not os.path.isfile(pred_path):
            raise PuzzleCAMError(f"missing prediction for image {item.image_id!r}: {pred_path}")
        preds.append(load_mask(pred_path))
        gts.append(load_mask(item.mask_path))
        ids.append(item.image_id)
    if not ids:
        raise PuzzleCAMError(f"split {dataset.split!r} has no ground-truth masks to evaluate")
    report = evaluate_miou(preds, gts, dataset.num_classes, ids=ids)
    text = report.to_text(dataset.class_names)
    print(text)
    with open(os.path.join(out_dir, "miou_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    with open(os.path.join(out_dir, "miou.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    return 0


def cmd_ablate(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    dataset = resolve_dataset(config, out_dir)
    base = config.to_train_config(out_dir, args.deterministic)
    table = run_ablation(base, dataset, inference_config=config.to_inference_config(),
                         pseudo_config=config.to_pseudo_config())
    width = max(len(row["row"]) for row in table)
    for row in table:
        print(f"{row['row']:<{width}s}  seed={row['seed']}  config={row['config_hash']}  "
              f"tau={row['tau']}  mIoU={row['miou']:.4f}")
    print(f"table: {os.path.join(out_dir, 'ablation.json')}")
    return 0


def cmd_visualize(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    num_workers()
    model = load_model(args.checkpoint)
    inference_config = config.to_inference_config()
    os.makedirs(out_dir, exist_ok=True)
    written = 0
    for path in args.images:
        image_id = os.path.splitext(os.path.basename(path))[0]
        try:
            image = load_image(path)
            h, w = image.shape[:2]
            chw = hwc_to_chw(image)
            single = normalize_cams(model.forward_single(chw).raw_cams)
            raw_re, _ = model.forward_puzzle(chw)
            tiled = normalize_cams(raw_re)
            final = infer_cams(model, image, labels=None, config=inference_config)
            panels = (
                ("single", single.maps.max(axis=0)),
                ("tiled", tiled.maps.max(axis=0)),
                ("final", final.maps.max(axis=0)),
            )
            for suffix, salience in panels:
                if salience.shape != (h, w):
                    salience = resize_bilinear(salience, h, w)
                save_overlay(image, salience, os.path.join(out_dir, f"{image_id}_{suffix}.png"))
            written += 1
        except (PuzzleCAMError, OSError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    if written == 0:
        raise PuzzleCAMError("no image could be visualized")
    print(f"wrote {3 * written} overlays to {out_dir}")
    return 0


def cmd_make_synthetic(args, config: RunConfig) -> int:
    out_dir = resolve_out(args)
    config.write_snapshot(out_dir)
    dataset = make_synthetic(config.to_synthetic_config(), out_dir)
    print(f"generated {len(dataset)} images in {out_dir} "
          f"({dataset.num_classes} classes: {', '.join(dataset.class_names)})")
    return 0


HANDLERS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "pseudo": cmd_pseudo,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        config = make_run_config(args)
        return HANDLERS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (PuzzleCAMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
