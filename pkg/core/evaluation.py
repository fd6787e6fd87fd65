#!/usr/bin/env python3
"""
Evaluation module for the AOSA explainability engine.
Runs saliency methods over a dataset, scores them with deletion/insertion
AUC and the pointing game, and reports tables, CSV and curve charts.
"""

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from tqdm import tqdm  # noqa: E402

from core.errors import ValidationError  # noqa: E402
from core.metrics import deletion_auc, insertion_auc, random_saliency, spt_score, spt_video  # noqa: E402
from core.saliency import (METHOD_APPROX, METHOD_EXACT, SaliencyConfig, aosa_map,  # noqa: E402
                           approx_map, cuboid_osa_map)
from core.tensor_io import atomic_write_bytes  # noqa: E402
from utils.constants import METHODS, SCORE_PROBABILITY  # noqa: E402

logger = logging.getLogger(__name__)

CSV_HEADER = ["method", "video", "AUC_del", "AUC_ins", "SPT"]
MEAN_ROW = "mean"


@dataclass(frozen=True)
class EvalSettings:
    """Saliency and metric settings shared by every video"""
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    cuboid_occ: Tuple[int, int, int] = (8, 16, 16)
    cuboid_strides: Tuple[int, int, int] = (2, 8, 8)
    steps: int = 28
    radius: float = 7.0
    baseline: float = 0.0
    seed: int = 0


@dataclass
class EvalRow:
    method: str
    video: str
    auc_del: float
    auc_ins: float
    spt: float


@dataclass
class EvalReport:
    """Per-video rows, per-method mean rows, pooled SPT and the raw curves"""
    rows: List[EvalRow] = field(default_factory=list)
    means: List[EvalRow] = field(default_factory=list)
    pooled_spt: Dict[str, float] = field(default_factory=dict)
    curves: Dict[str, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = field(default_factory=dict)


def parse_methods(text):
    """
    Split a comma-separated method list and check the names.

    Returns:
        list: Method names in the given order
    """
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise ValidationError(f"Unknown methods {unknown}, expected a subset of {METHODS}")
    return methods


def saliency_for(method, video, model, settings, index):
    """
    Compute the map of one named method.

    Args:
        method (str): One of METHODS
        video (VideoTensor): Model input
        model (ScoreModel): Classifier
        settings (EvalSettings): Shared settings, target class already set
        index (int): Video index, offsets the random-map seed

    Returns:
        SaliencyMap: The map
    """
    cfg = settings.saliency
    single = replace(cfg, masks=replace(cfg.masks, K=0))
    if method == "aosa":
        return aosa_map(video, model, replace(cfg, method=METHOD_EXACT))
    if method == "aosa_sgl":
        return aosa_map(video, model, replace(single, method=METHOD_EXACT))
    if method == "aosa_approx":
        return approx_map(video, model, replace(cfg, method=METHOD_APPROX))
    if method == "aosa_sgl_approx":
        return approx_map(video, model, replace(single, method=METHOD_APPROX))
    if method == "cuboid":
        return cuboid_osa_map(video, model, settings.cuboid_occ, settings.cuboid_strides, cfg)
    if method == "random":
        return random_saliency(video.dims, settings.seed + index)
    raise ValidationError(f"Unknown method '{method}'")


def evaluate_video(job):
    """
    Score every method on one video.

    Args:
        job (tuple): (index, video, boxes, model, settings, methods)

    Returns:
        tuple: (index, list of (method, deletion result, insertion result, SPTResult))
    """
    index, video, boxes, model, settings, methods = job
    scores = model.forward(video, SCORE_PROBABILITY)
    cfg = settings.saliency
    class_id = int(np.argmax(scores)) if cfg.target_class is None else cfg.target_class
    settings = replace(settings, saliency=replace(cfg, target_class=class_id))
    results = []
    for method in methods:
        smap = saliency_for(method, video, model, settings, index)
        dele = deletion_auc(video, smap, model, class_id, settings.steps, settings.baseline)
        ins = insertion_auc(video, smap, model, class_id, settings.steps, settings.baseline)
        spt = spt_video(smap, boxes, settings.radius)
        results.append((method, dele, ins, spt))
    return index, results


def evaluate_dataset(samples, model, settings, methods, workers=1):
    """
    Evaluate methods over (video, boxes) samples.

    Args:
        samples (list): (VideoTensor, GroundTruthBoxes) pairs, model inputs
        model (ScoreModel): Classifier, picklable when workers > 1
        settings (EvalSettings): Shared settings
        methods (list): Method names
        workers (int): Parallel processes

    Returns:
        EvalReport: Rows ordered by video then method, plus mean rows; the
            mean SPT averages the videos that have annotated frames, and
            pooled_spt holds all hits over all annotated frames per method
    """
    if not samples:
        raise ValidationError("Empty dataset")
    jobs = [(i, video, boxes, model, settings, methods) for i, (video, boxes) in enumerate(samples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(tqdm(pool.map(evaluate_video, jobs), total=len(jobs), desc="Evaluating", disable=None))
    else:
        outcomes = [evaluate_video(job) for job in tqdm(jobs, desc="Evaluating", disable=None)]
    outcomes.sort(key=lambda item: item[0])

    report = EvalReport(curves={m: [] for m in methods})
    pointing = {m: [] for m in methods}
    for index, results in outcomes:
        for method, dele, ins, spt in results:
            pointing[method].append(spt)
            rate = spt.hit_rate if spt.annotated else float("nan")
            report.rows.append(EvalRow(method, f"{index:04d}", dele.auc, ins.auc, rate))
            report.curves[method].append((dele.fractions, dele.curve, ins.curve))

    for method in methods:
        rows = [r for r in report.rows if r.method == method]
        rates = [r.spt for r in rows if not np.isnan(r.spt)]
        report.means.append(EvalRow(
            method, MEAN_ROW,
            float(np.mean([r.auc_del for r in rows])),
            float(np.mean([r.auc_ins for r in rows])),
            float(np.mean(rates)) if rates else float("nan"),
        ))
        annotated = any(r.annotated for r in pointing[method])
        report.pooled_spt[method] = spt_score(pointing[method]) if annotated else float("nan")
    logger.info(f"Evaluated {len(methods)} methods on {len(samples)} videos")
    return report


def format_csv(report):
    """CSV text with per-video rows followed by the mean rows"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows + report.means:
        writer.writerow([row.method, row.video, f"{row.auc_del:.6f}", f"{row.auc_ins:.6f}", f"{row.spt:.6f}"])
    return buffer.getvalue()


def format_table(report):
    """Plain-text table of the rows with the means and pooled SPT as footer"""
    lines = [f"{'method':<16} {'video':<6} {'AUC_del':>8} {'AUC_ins':>8} {'SPT':>6}"]
    lines.append("-" * len(lines[0]))

    def line(row):
        return f"{row.method:<16} {row.video:<6} {row.auc_del:8.4f} {row.auc_ins:8.4f} {row.spt:6.3f}"

    lines.extend(line(row) for row in report.rows)
    lines.append("-" * len(lines[0]))
    lines.extend(line(row) for row in report.means)
    lines.extend(f"{method:<16} {'pooled':<6} {'':>8} {'':>8} {rate:6.3f}"
                 for method, rate in report.pooled_spt.items())
    return "\n".join(lines) + "\n"


def write_csv(report, path):
    atomic_write_bytes(path, format_csv(report).encode("utf-8"))
    logger.info(f"Wrote metrics to {path}")


def plot_curves(report, path):
    """
    Save mean deletion and insertion curves per method as a PNG.

    Args:
        report (EvalReport): Evaluation results
        path (str): Output path
    """
    fig, (ax_del, ax_ins) = plt.subplots(1, 2, figsize=(11, 4.5))
    for method, curves in report.curves.items():
        if not curves:
            continue
        fractions = curves[0][0]
        ax_del.plot(fractions, np.mean([c[1] for c in curves], axis=0), linewidth=2, label=method)
        ax_ins.plot(fractions, np.mean([c[2] for c in curves], axis=0), linewidth=2, label=method)
    for ax, name in ((ax_del, "Deletion"), (ax_ins, "Insertion")):
        ax.set_xlabel("Fraction of pixels", fontsize=12)
        ax.set_ylabel("Class probability", fontsize=12)
        ax.set_title(f"{name} curves", fontsize=14)
        ax.grid(True, linestyle="--", alpha=0.7)
        ax.legend()
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=150)
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Saved curve chart to {path}")
