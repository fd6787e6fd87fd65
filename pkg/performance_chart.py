#!/usr/bin/env python3
"""
Cost of exact AOSA versus AOSA-approx: model calls and wall time for
anchor spacings 8 and 4, printed as a table and charted.

    python performance_chart.py [--model model.npz] [--output aosa_cost.png]
"""

import argparse
import logging
import os
import sys
import time

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import matplotlib  # noqa: E402
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.cnn import Tiny3DCNN  # noqa: E402
from core.masks import MaskConfig  # noqa: E402
from core.saliency import METHOD_APPROX, METHOD_EXACT, SaliencyConfig, aosa_map, approx_map  # noqa: E402
from core.video import SyntheticSpec, generate_synthetic  # noqa: E402

logger = logging.getLogger(__name__)


def measure_costs(model, video, spacings=(8, 4), K=5, occ=(16, 16)):
    """
    Run exact and approximated AOSA for each anchor spacing.

    Args:
        model (ScoreModel): Classifier
        video (VideoTensor): Input
        spacings (tuple): Anchor spacings s
        K (int): Integrated partners
        occ (tuple): Occlusion (h, w)

    Returns:
        list: Dicts with method, s, masks, forwards, backwards, seconds
    """
    rows = []
    for s in spacings:
        masks = MaskConfig(s=s, h=occ[0], w=occ[1], K=K)
        for method, build in ((METHOD_EXACT, aosa_map), (METHOD_APPROX, approx_map)):
            start = time.monotonic()
            smap = build(video, model, SaliencyConfig(method=method, masks=masks))
            seconds = time.monotonic() - start
            meta = smap.metadata
            rows.append({"method": meta["method"], "s": s, "masks": meta["n_masks"],
                         "forwards": meta["forwards"], "backwards": meta["backwards"], "seconds": seconds})
    return rows


def format_rows(rows):
    lines = ["Method          |  s | Masks | Forwards | Backwards | Time (s)", "-" * 62]
    for r in rows:
        lines.append(f"{r['method']:<15} | {r['s']:2d} | {r['masks']:5d} | {r['forwards']:8d} | "
                     f"{r['backwards']:9d} | {r['seconds']:8.2f}")
    return "\n".join(lines)


def plot_costs(rows, output):
    """Bar chart of model calls and wall time per (method, s)"""
    labels = [f"{r['method']}\ns={r['s']}" for r in rows]
    calls = np.array([r["forwards"] + r["backwards"] for r in rows])
    seconds = np.array([r["seconds"] for r in rows])
    x = np.arange(len(rows))

    fig, (ax_calls, ax_time) = plt.subplots(1, 2, figsize=(12, 5))
    ax_calls.bar(x, calls, color="tab:blue")
    ax_calls.set_yscale("log")
    ax_calls.set_ylabel("Model calls (forward + backward)", fontsize=12)
    ax_time.bar(x, seconds, color="tab:orange")
    ax_time.set_ylabel("Execution Time (seconds)", fontsize=12)
    for ax in (ax_calls, ax_time):
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=9)
        ax.grid(True, axis="y", linestyle="--", alpha=0.7)
    fig.suptitle("Cost of generating one saliency map", fontsize=14)
    fig.tight_layout()
    fig.savefig(output, dpi=150)
    plt.close(fig)
    logger.info(f"Saved chart to {output}")


def main():
    parser = argparse.ArgumentParser(description="Chart the cost of exact and approximated AOSA")
    parser.add_argument("--model", type=str, help="Toy model archive (default: untrained model)")
    parser.add_argument("--size", type=int, default=112, help="Frame size of the synthetic clip")
    parser.add_argument("--frames", type=int, default=16, help="Frames of the synthetic clip")
    parser.add_argument("--output", type=str, default="aosa_cost.png", help="Output chart")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    spec = SyntheticSpec(frames=args.frames, height=args.size, width=args.size)
    video, _, _ = generate_synthetic(spec, seed=0)
    if args.model:
        model = Tiny3DCNN.load(args.model)
    else:
        model = Tiny3DCNN(8, channels=3, input_dims=video.dims, seed=0)

    rows = measure_costs(model, video)
    print(format_rows(rows))
    plot_costs(rows, args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
