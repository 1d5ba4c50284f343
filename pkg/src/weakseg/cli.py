"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure during training. Every run prints its effective configuration so
results are reproducible from the console output alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config_io import ConfigError, apply_overrides, train_config_from_ini, train_config_to_ini
from .densecrf import CrfModel, CrfParams, mean_field, map_labels
from .netpbm import NetpbmError, read_ppm, write_pgm
from .pipeline import (TrainConfig, NumericFailure, train, load_model, infer, evaluate,
                       all_background_report, wsol_report, write_wsol_csv)
from .synthdata import SceneSpec, generate, write_dataset, load_dataset, dataset_mean_pixel
from .tensorcore import CheckpointError

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def build_parser() -> Parser:
    parser = Parser(prog="weakseg",
                    description="Weakly-supervised semantic segmentation from image tags.")
    parser.add_argument("--version", action="version", version=f"weakseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    gen = sub.add_parser("gen-data", help="generate the synthetic shapes dataset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--n", type=int, required=True, help="number of images")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--classes", type=int, default=5, help="number of shape classes (1-5)")
    gen.add_argument("--size", type=int, default=64, help="image side length in pixels")

    tr = sub.add_parser("train", help="train the segmentation model")
    tr.add_argument("--data", required=True, help="dataset directory from gen-data")
    tr.add_argument("--config", help="ini config file; defaults apply when omitted")
    tr.add_argument("--out", required=True, help="run output directory")
    tr.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key, e.g. --set switch.mode=none")

    inf = sub.add_parser("infer", help="segment a single image")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--image", required=True, help="input .ppm image")
    inf.add_argument("--out", required=True, help="output .pgm label mask")
    inf.add_argument("--no-filter", action="store_true", help="disable the class filter")
    inf.add_argument("--no-crf", action="store_true", help="disable CRF refinement")

    ev = sub.add_parser("eval", help="segmentation metrics on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="val", choices=("train", "val"))
    ev.add_argument("--report", help="write the per-class IoU/PCA/mIoU report CSV here")
    ev.add_argument("--no-filter", action="store_true")
    ev.add_argument("--crf", action="store_true", help="apply CRF refinement at inference")

    ws = sub.add_parser("wsol", help="object localization AP from activation maps")
    ws.add_argument("--checkpoint", required=True)
    ws.add_argument("--data", required=True)
    ws.add_argument("--split", default="val", choices=("train", "val"))
    ws.add_argument("--threshold", type=float, default=0.6, help="map binarization threshold")
    ws.add_argument("--tiou", default="0.5,0.2", help="comma-separated IoU thresholds")
    ws.add_argument("--nms-iou", type=float, default=0.3)
    ws.add_argument("--report", help="write the per-class AP report CSV here")

    ab = sub.add_parser("ablate", help="train and evaluate a grid of config variants")
    ab.add_argument("--data", required=True)
    ab.add_argument("--suite", required=True,
                    help="ini file: one section per variant with dotted config overrides")
    ab.add_argument("--out", required=True)
    ab.add_argument("--config", help="base config file shared by every variant")

    crf = sub.add_parser("crf", help="standalone dense-CRF smoothing for debugging")
    crf.add_argument("--unary", required=True,
                     help="plain-text tensor: first line 'L H W', then L*H*W -log probabilities")
    crf.add_argument("--image", required=True, help=".ppm image supplying the colors")
    crf.add_argument("--out", required=True, help="output .pgm label map")
    crf.add_argument("--iterations", type=int, default=10)

    return parser


def _print_config(config: TrainConfig):
    print("# effective configuration")
    print(train_config_to_ini(config), end="")


def cmd_gen_data(args) -> int:
    spec = SceneSpec(size=args.size, num_classes=args.classes, seed=args.seed)
    dataset = generate(spec, args.n)
    write_dataset(dataset, args.out)
    mean = dataset_mean_pixel(dataset)
    counts = np.zeros(args.classes + 1, dtype=int)
    for sample in dataset.samples:
        for cid in sample.labels:
            counts[cid] += 1
    print(f"wrote {len(dataset)} images ({args.size}x{args.size}, {args.classes} classes) "
          f"to {args.out}")
    print(f"train/val: {len(dataset.train_indices)}/{len(dataset.val_indices)}")
    print(f"mean pixel: ({mean[0]:.2f}, {mean[1]:.2f}, {mean[2]:.2f})")
    print("class counts: " + " ".join(f"{c}:{counts[c]}" for c in range(1, args.classes + 1)))
    return 0


def _load_config(args) -> TrainConfig:
    config = train_config_from_ini(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return apply_overrides(config, overrides) if overrides else config


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.data)
    _print_config(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.ini").write_text(train_config_to_ini(config))
    artifacts = train(config, dataset, out)
    print(f"checkpoint: {artifacts.checkpoint_path}")
    print(f"loss log:   {artifacts.loss_csv}")
    return 0


def cmd_infer(args) -> int:
    model, config = load_model(args.checkpoint)
    image = read_ppm(args.image)
    mask = infer(image, model, apply_filter=not args.no_filter, apply_crf=not args.no_crf,
                 crf_params=config.crf, crf_backend=config.crf_backend,
                 filter_threshold=config.filter_threshold)
    write_pgm(args.out, mask.astype(np.uint8))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, config = load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate(model, dataset, split=args.split, apply_filter=not args.no_filter,
                      apply_crf=args.crf, crf_params=config.crf,
                      crf_backend=config.crf_backend,
                      filter_threshold=config.filter_threshold)
    print(f"split: {args.split} ({len(dataset.split(args.split))} images)")
    for c, iou in enumerate(report.per_class_iou):
        label = "background" if c == 0 else f"class {c}"
        print(f"  iou {label:<11} {'n/a' if np.isnan(iou) else f'{iou:.4f}'}")
    print(f"  pca  {report.pixel_accuracy:.4f}")
    print(f"  miou {report.mean_iou:.4f}")
    if args.report:
        report.write_csv(args.report)
        print(f"report: {args.report}")
    return 0


def cmd_wsol(args) -> int:
    model, _ = load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    tious = tuple(float(v) for v in args.tiou.split(","))
    report = wsol_report(model, dataset, split=args.split, threshold=args.threshold,
                         tious=tious, nms_iou=args.nms_iou)
    for tiou in tious:
        entry = report[tiou]
        print(f"tIoU {tiou}:")
        for c, ap in sorted(entry["per_class"].items()):
            print(f"  class {c}: AP {ap:.4f}")
        print(f"  mean AP: {entry['mean']:.4f}")
    if args.report:
        write_wsol_csv(report, args.report)
        print(f"report: {args.report}")
    return 0


def cmd_ablate(args) -> int:
    import configparser

    base = train_config_from_ini(args.config) if args.config else TrainConfig()
    parser = configparser.ConfigParser()
    try:
        with open(args.suite) as f:
            parser.read_file(f, source=args.suite)
    except configparser.Error as e:
        raise ConfigError(f"suite parse error: {e}") from e
    if not parser.sections():
        raise ConfigError(f"{args.suite}: no variant sections")
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in parser.sections():
        overrides = dict(parser.items(variant))
        config = apply_overrides(base, overrides)
        print(f"=== variant {variant} ===")
        _print_config(config)
        artifacts = train(config, dataset, out / variant)
        model, _ = load_model(artifacts.checkpoint_path)
        report = evaluate(model, dataset, split="val", apply_filter=True, apply_crf=False,
                          filter_threshold=config.filter_threshold,
                          crf_params=config.crf, crf_backend=config.crf_backend)
        rows.append((variant, report.mean_iou, report.pixel_accuracy))
        print(f"variant {variant}: miou {report.mean_iou:.4f} pca {report.pixel_accuracy:.4f}")
    table = out / "ablation.csv"
    with open(table, "w") as f:
        f.write("variant,miou,pca\n")
        for variant, miou, pca in rows:
            f.write(f"{variant},{miou:.6f},{pca:.6f}\n")
    print(f"\n{'variant':<24} {'miou':>8} {'pca':>8}")
    for variant, miou, pca in rows:
        print(f"{variant:<24} {miou:>8.4f} {pca:>8.4f}")
    print(f"table: {table}")
    return 0


def cmd_crf(args) -> int:
    with open(args.unary) as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ConfigError(f"{args.unary}: first line must be 'L H W', got {header}")
        labels, h, w = (int(v) for v in header)
        values = np.loadtxt(f).reshape(labels, h, w)
    image = read_ppm(args.image)
    if image.shape[:2] != (h, w):
        raise ConfigError(f"image is {image.shape[:2]}, unary is {(h, w)}")
    params = CrfParams(iterations=args.iterations)
    model = CrfModel(values, image.transpose(2, 0, 1).astype(np.float64))
    q = mean_field(model, params)
    write_pgm(args.out, map_labels(q).astype(np.uint8))
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "wsol": cmd_wsol,
    "ablate": cmd_ablate,
    "crf": cmd_crf,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericFailure as e:
        sys.stderr.write(f"numeric failure: {e}\n")
        return NUMERIC_EXIT
    except (ConfigError, CheckpointError, NetpbmError, FileNotFoundError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
