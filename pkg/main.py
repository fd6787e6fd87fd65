#!/usr/bin/env python3
"""
Main entry point for the AOSA explainability engine.

    python main.py train   --out model.npz [--data DIR]
    python main.py explain --model model.npz --video clip.aost --out map.aost
    python main.py eval    --model model.npz [--data DIR] [--methods aosa,cuboid,random]
    python main.py render  --map map.aost --video clip.aost --out frames/ [--panel]
    python main.py selftest
"""

import argparse
import glob
import logging
import math
import os
import shlex
import sys
import time

# Add current directory to path if needed
ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import numpy as np  # noqa: E402

from core.cnn import Tiny3DCNN, train_toy  # noqa: E402
from core.data_loader import load_dataset, resolve_config, write_sidecar  # noqa: E402
from core.errors import AOSAError, DimensionMismatchError, ValidationError  # noqa: E402
from core.evaluation import (EvalSettings, evaluate_dataset, format_table, parse_methods,  # noqa: E402
                             plot_curves, write_csv)
from core.flow import FlowParams  # noqa: E402
from core.masks import MaskConfig  # noqa: E402
from core.render import overlay, render_panel, write_overlays  # noqa: E402
from core.runner import ExternalModel  # noqa: E402
from core.saliency import SaliencyConfig, build_masks, explain  # noqa: E402
from core.selftest import run_selftest  # noqa: E402
from core.tensor_io import load_tensor, save_tensor  # noqa: E402
from core.video import VideoTensor, generate_dataset, normalize  # noqa: E402
from utils.constants import APP_NAME, APP_VERSION, PANEL_FRAMES, SCORE_LOGIT, SCORE_PROBABILITY  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING = 2
EXIT_DIMENSIONS = 3

SCORE_FLAGS = {"prob": SCORE_PROBABILITY, "logit": SCORE_LOGIT}

# flag destination -> configuration key
FLAG_KEYS = {
    "method": "method", "fill": "fill", "fill_value": "fill_value", "s": "s",
    "occ_h": "occ_h", "occ_w": "occ_w", "K": "K", "score": "score", "target": "class",
    "seed": "seed", "steps": "steps", "radius": "radius",
    "normalize_coverage": "normalize_coverage", "adjust": "adjust", "workers": "workers",
    "methods": "methods", "videos": "videos", "epochs": "epochs", "batch_size": "batch_size",
    "learning_rate": "learning_rate", "per_class": "per_class",
}


def setup_logging(verbosity):
    """Configure the root logger once: -v for DEBUG, -q for WARNING"""
    level = logging.INFO
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def add_saliency_flags(parser):
    group = parser.add_argument_group("saliency")
    group.add_argument("--method", choices=["exact", "approx"], help="Exact or approximated scoring")
    group.add_argument("--fill", choices=["const", "cond"], help="Constant or conditional fill")
    group.add_argument("--fill-value", dest="fill_value", type=float, help="Constant fill value")
    group.add_argument("--s", type=int, help="Anchor spacing in pixels")
    group.add_argument("--occ-h", dest="occ_h", type=int, help="Occlusion height")
    group.add_argument("--occ-w", dest="occ_w", type=int, help="Occlusion width")
    group.add_argument("--K", type=int, help="Integrated partner masks (0 = single masks)")
    group.add_argument("--score", choices=sorted(SCORE_FLAGS), help="Score mode")
    group.add_argument("--class", dest="target", type=str, help="Target class id or 'argmax'")
    group.add_argument("--seed", type=int, help="Random seed")
    group.add_argument("--normalize-coverage", dest="normalize_coverage", action="store_true", default=None,
                       help="Divide the map by per-pixel coverage")
    group.add_argument("--no-adjust", dest="adjust", action="store_false", default=None,
                       help="Disable the interquartile adjustment")
    group.add_argument("--flow", type=str, help="Dense flow tensor (T-1, H, W, 2) or directory of per-pair files")


def add_metric_flags(parser):
    group = parser.add_argument_group("evaluation", "Metric settings; other commands compute no metrics")
    group.add_argument("--steps", type=int, help="Deletion/insertion steps")
    group.add_argument("--radius", type=float, help="Pointing-game radius in pixels")
    group.add_argument("--workers", type=int, help="Parallel worker processes")


def add_model_flags(parser):
    parser.add_argument("--model", type=str, help="Toy model archive (.npz)")
    parser.add_argument("--external-cmd", dest="external_cmd", type=str,
                        help="Command of an external model speaking the wire protocol")
    parser.add_argument("--classes", type=int, help="Class count of the external model")
    parser.add_argument("--timeout", type=float, default=30.0, help="External model timeout in seconds")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Configuration file (JSON or key=value)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="Debug logging")
    common.add_argument("-q", "--quiet", action="count", default=0, help="Warnings only")

    parser = argparse.ArgumentParser(prog="aosa", description=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="Train the toy classifier")
    train.add_argument("--out", required=True, help="Output model archive")
    train.add_argument("--data", type=str, help="Dataset directory (default: generate synthetic)")
    train.add_argument("--per-class", dest="per_class", type=int, help="Synthetic videos per class")
    train.add_argument("--epochs", type=int, help="Training epochs")
    train.add_argument("--batch-size", dest="batch_size", type=int, help="SGD batch size")
    train.add_argument("--lr", dest="learning_rate", type=float, help="SGD learning rate")
    train.add_argument("--seed", type=int, help="Random seed")
    train.add_argument("--score", choices=sorted(SCORE_FLAGS), help="Score mode of the saved model")

    exp = sub.add_parser("explain", parents=[common], help="Compute a saliency map")
    add_model_flags(exp)
    exp.add_argument("--video", required=True, help="Video tensor file")
    exp.add_argument("--out", required=True, help="Output map tensor file")
    exp.add_argument("--export-masks", dest="export_masks", type=str, help="Directory for rasterized masks")
    add_saliency_flags(exp)

    ev = sub.add_parser("eval", parents=[common], help="Evaluate saliency methods over a dataset")
    add_model_flags(ev)
    ev.add_argument("--data", type=str, help="Dataset directory (default: generate synthetic)")
    ev.add_argument("--videos", type=int, help="Synthetic videos to generate")
    ev.add_argument("--methods", type=str, help="Comma-separated methods")
    ev.add_argument("--csv", type=str, help="Output CSV file")
    ev.add_argument("--plot", type=str, help="Output PNG of mean curves")
    add_saliency_flags(ev)
    add_metric_flags(ev)

    ren = sub.add_parser("render", parents=[common], help="Render map overlays")
    ren.add_argument("--map", required=True, help="Saliency map tensor file")
    ren.add_argument("--video", required=True, help="Video tensor file")
    ren.add_argument("--out", required=True, help="Output directory")
    ren.add_argument("--alpha", type=float, default=0.5, help="Overlay blend weight")
    ren.add_argument("--panel", nargs="?", const=",".join(str(f) for f in PANEL_FRAMES),
                     help="Also write panel.png of these 1-based frames")

    test = sub.add_parser("selftest", parents=[common], help="Run built-in correctness checks")
    test.add_argument("--seed", type=int, default=0, help="Random seed")
    return parser


def merge_config(args):
    """Defaults < config file < flags"""
    config = resolve_config(getattr(args, "config", None))
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            config[key] = value
    return config


def saliency_config(config):
    """Build a SaliencyConfig from a flat configuration"""
    target = str(config["class"]).strip()
    if target == "argmax":
        target_class = None
    else:
        try:
            target_class = int(target)
        except ValueError:
            raise ValidationError(f"--class must be an integer or 'argmax', got {target!r}") from None
    if config["score"] not in SCORE_FLAGS:
        raise ValidationError(f"Unknown score mode '{config['score']}'")
    return SaliencyConfig(
        method=config["method"], fill=config["fill"], fill_value=float(config["fill_value"]),
        masks=MaskConfig(s=int(config["s"]), h=int(config["occ_h"]), w=int(config["occ_w"]), K=int(config["K"])),
        flow=FlowParams(levels=int(config["levels"]), window_radius=int(config["window_radius"]),
                        max_iterations=int(config["max_iterations"]), epsilon=float(config["epsilon"])),
        target_class=target_class, score_mode=SCORE_FLAGS[config["score"]],
        normalize_coverage=bool(config["normalize_coverage"]), mc_samples=int(config["mc_samples"]),
        seed=int(config["seed"]), adjust=bool(config["adjust"]),
    )


def require_files(*paths):
    """Fail before any work when an input is missing"""
    for path in paths:
        if path and not os.path.exists(path):
            raise FileNotFoundError(f"No such file: {path}")


def load_model(args, config):
    """
    Toy model from --model, or an external model from --external-cmd.

    Returns:
        tuple: (ScoreModel, norm mean, norm std)
    """
    if args.model and args.external_cmd:
        raise ValidationError("Give either --model or --external-cmd, not both")
    if args.model:
        model = Tiny3DCNN.load(args.model)
        mean = model.norm_mean if model.norm_mean is not None else config["norm_mean"]
        std = model.norm_std if model.norm_std is not None else config["norm_std"]
        return model, mean, std
    if args.external_cmd:
        if not args.classes:
            raise ValidationError("--external-cmd needs --classes")
        model = ExternalModel(shlex.split(args.external_cmd), args.classes,
                              SCORE_FLAGS[config["score"]], timeout=args.timeout, cwd=ROOT)
        return model, config["norm_mean"], config["norm_std"]
    raise ValidationError("A model is required: --model or --external-cmd")


def load_video(path):
    data = load_tensor(path)
    if data.ndim != 4:
        raise DimensionMismatchError(f"{path}: expected a rank-4 video, got rank {data.ndim}")
    return VideoTensor(data)


def load_flows(path, dims):
    """Dense flow from one rank-4 file or a directory of rank-3 per-pair files"""
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.aost")))
        flows = np.stack([load_tensor(f) for f in files]) if files else np.zeros((0,))
    else:
        flows = load_tensor(path)
    expected = (dims[0] - 1, dims[1], dims[2], 2)
    if flows.shape != expected:
        raise DimensionMismatchError(f"Dense flow {flows.shape} does not match {expected}")
    return flows.astype(np.float64)


def synthetic_samples(count, dims, seed):
    per_class = max(1, math.ceil(count / 8))
    samples = generate_dataset(per_class, dims[0], dims[1], dims[2], seed)
    return samples[:count]


def cmd_train(args, config):
    require_files(args.data)
    seed = int(config["seed"])
    if args.data:
        samples = load_dataset(args.data)
    else:
        samples = generate_dataset(int(config["per_class"]), int(config["frames"]),
                                   int(config["height"]), int(config["width"]), seed)
    if not samples:
        raise FileNotFoundError("Empty dataset")
    mean, std = config["norm_mean"], config["norm_std"]
    dataset = [(normalize(video, mean, std), label) for video, _, label in samples]
    start = time.monotonic()
    result = train_toy(dataset, float(config["learning_rate"]), int(config["epochs"]),
                       int(config["batch_size"]), seed, score_mode=SCORE_FLAGS[config["score"]],
                       norm_mean=list(mean), norm_std=list(std))
    result.model.save(args.out)
    print(f"train: {len(dataset)} videos, {int(config['epochs'])} epochs, loss {result.losses[-1]:.4f}, "
          f"accuracy {result.accuracies[-1]:.3f}, {time.monotonic() - start:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_explain(args, config):
    require_files(args.video, args.model, args.flow)
    cfg = saliency_config(config)
    model, mean, std = load_model(args, config)
    try:
        raw = load_video(args.video)
        video = normalize(raw, mean, std)
        flows = load_flows(args.flow, video.dims) if args.flow else None
        start = time.monotonic()
        smap = explain(video, model, cfg, flows)
        elapsed = time.monotonic() - start
        if args.export_masks:
            _, _, masks = build_masks(video, cfg, flows)
            os.makedirs(args.export_masks, exist_ok=True)
            for i, mask in enumerate(masks):
                save_tensor(mask.rasterize(), os.path.join(args.export_masks, f"mask_{i:04d}.aost"))
    finally:
        if isinstance(model, ExternalModel):
            model.close()
    save_tensor(smap.values, args.out)
    write_sidecar(args.out, smap.metadata)
    meta = smap.metadata
    print(f"explain: method={meta['method']} masks={meta['n_masks']} class={meta['class']} "
          f"forwards={meta['forwards']} backwards={meta['backwards']} time={elapsed:.2f}s -> {args.out}")
    return EXIT_OK


def cmd_eval(args, config):
    require_files(args.data, args.model)
    methods = parse_methods(config["methods"])
    model, mean, std = load_model(args, config)
    workers = int(config["workers"])
    if isinstance(model, ExternalModel) and workers > 1:
        logger.warning("External models are evaluated with a single worker")
        workers = 1
    try:
        if args.data:
            samples = [(video, boxes) for video, boxes, _ in load_dataset(args.data)]
        else:
            dims = model.input_dims or (int(config["frames"]), int(config["height"]), int(config["width"]), 3)
            # held out from the training stream
            seed = int(config["seed"]) + 1
            samples = [(video, boxes) for video, boxes, _ in synthetic_samples(int(config["videos"]), dims, seed)]
        if not samples:
            raise FileNotFoundError("Empty dataset")
        samples = [(normalize(video, mean, std), boxes) for video, boxes in samples]
        cuboid = (int(config["occ_t"]), int(config["occ_h"]), int(config["occ_w"]))
        stride_s = int(config["stride_s"])
        settings = EvalSettings(
            saliency=saliency_config(config), cuboid_occ=cuboid,
            cuboid_strides=(int(config["stride_t"]), stride_s, stride_s),
            steps=int(config["steps"]), radius=float(config["radius"]),
            baseline=float(config["baseline"]), seed=int(config["seed"]),
        )
        report = evaluate_dataset(samples, model, settings, methods, workers)
    finally:
        if isinstance(model, ExternalModel):
            model.close()
    print(format_table(report), end="")
    if args.csv:
        write_csv(report, args.csv)
    if args.plot:
        plot_curves(report, args.plot)
    return EXIT_OK


def cmd_render(args, config):
    require_files(args.map, args.video)
    video = load_video(args.video)
    values = load_tensor(args.map).astype(np.float64)
    frames = overlay(video, values, args.alpha)
    write_overlays(frames, args.out)
    if args.panel:
        numbers = [int(v) for v in args.panel.split(",") if v.strip()]
        render_panel(video, values, os.path.join(args.out, "panel.png"), numbers, args.alpha)
    print(f"render: {len(frames)} frames -> {args.out}")
    return EXIT_OK


def cmd_selftest(args, config):
    results = run_selftest(args.seed)
    for result in results:
        print(f"selftest {result.name}: {'ok' if result.passed else 'FAILED'} ({result.detail})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


COMMANDS = {
    "train": cmd_train,
    "explain": cmd_explain,
    "eval": cmd_eval,
    "render": cmd_render,
    "selftest": cmd_selftest,
}


def main(argv=None):
    """Main entry point for the application"""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose - args.quiet)
    try:
        config = merge_config(args)
        return COMMANDS[args.command](args, config)
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_MISSING
    except DimensionMismatchError as e:
        logger.error(f"Dimension mismatch: {e}")
        return EXIT_DIMENSIONS
    except AOSAError as e:
        logger.error(str(e))
        logger.debug("Traceback", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
