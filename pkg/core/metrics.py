#!/usr/bin/env python3
"""
Metrics module for the AOSA explainability engine.
Deletion/insertion curves with their AUC, the spatial pointing game and
a random-map baseline.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from core.errors import DimensionMismatchError, ValidationError
from core.saliency import SaliencyMap
from utils.constants import SCORE_PROBABILITY

logger = logging.getLogger(__name__)

DELETION = "deletion"
INSERTION = "insertion"


@dataclass(frozen=True, eq=False)
class DeletionInsertionResult:
    """Class score after each step and the trapezoidal area under it"""
    curve: np.ndarray
    fractions: np.ndarray
    auc: float
    mode: str
    steps: int
    baseline: float = 0.0


@dataclass
class SPTResult:
    """Per-frame pointing-game hits (None for frames without a box)"""
    hits: List[Optional[bool]] = field(default_factory=list)
    radius: float = 7.0

    @property
    def annotated(self):
        return sum(1 for h in self.hits if h is not None)

    @property
    def hit_count(self):
        return sum(1 for h in self.hits if h)

    @property
    def hit_rate(self):
        if self.annotated == 0:
            raise ValidationError("No annotated frames")
        return self.hit_count / self.annotated


def _values(saliency):
    return saliency.values if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)


def trapezoid(y, x):
    """Trapezoidal integral of y over x"""
    y, x = np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def _curve(video, saliency, model, class_id, steps, baseline, mode, score_mode):
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    x = np.asarray(video.data, dtype=np.float64)
    values = _values(saliency)
    if values.shape != x.shape[:3]:
        raise DimensionMismatchError(f"Saliency map {values.shape} does not match video {x.shape[:3]}")
    T, H, W, C = x.shape
    n = T * H * W
    order = np.argsort(-values.reshape(-1), kind="stable")
    batch = math.ceil(n / steps)

    flat_src = x.reshape(n, C)
    if mode == DELETION:
        current = x.copy()
        replacement = np.full((n, C), baseline)
    else:
        current = np.full_like(x, baseline)
        replacement = flat_src
    flat = current.reshape(n, C)

    curve = [model.forward(current, score_mode)[class_id]]
    fractions = [0.0]
    for k in range(1, steps + 1):
        idx = order[(k - 1) * batch:k * batch]
        flat[idx] = replacement[idx]
        curve.append(model.forward(current, score_mode)[class_id])
        fractions.append(min(k * batch, n) / n)
    curve, fractions = np.array(curve), np.array(fractions)
    auc = trapezoid(curve, fractions)
    logger.debug(f"{mode} AUC {auc:.4f} over {steps} steps")
    return DeletionInsertionResult(curve, fractions, auc, mode, steps, baseline)


def deletion_auc(video, saliency, model, class_id, steps=28, baseline=0.0, score_mode=SCORE_PROBABILITY):
    """
    Replace positions with the baseline in descending saliency order
    (ties by position index) and track the class score.

    Args:
        video (VideoTensor): Clean input
        saliency (SaliencyMap or np.ndarray): T x H x W map
        model (ScoreModel): Classifier
        class_id (int): Scored class
        steps (int): Number of equal-sized batches
        baseline (float): Value written into deleted positions

    Returns:
        DeletionInsertionResult: steps + 1 curve points and the AUC
    """
    return _curve(video, saliency, model, class_id, steps, baseline, DELETION, score_mode)


def insertion_auc(video, saliency, model, class_id, steps=28, baseline=0.0, score_mode=SCORE_PROBABILITY):
    """Restore positions onto an all-baseline input in descending saliency order"""
    return _curve(video, saliency, model, class_id, steps, baseline, INSERTION, score_mode)


def box_distance(row, col, box):
    """Euclidean distance from a pixel to the nearest pixel of a box"""
    top, left, height, width = box
    dr = max(top - row, 0, row - (top + height - 1))
    dc = max(left - col, 0, col - (left + width - 1))
    return math.hypot(dr, dc)


def spt_hit(map_frame, box, radius=7.0):
    """
    Pointing-game hit: the disc around the frame's argmax (first in
    row-major order on ties) touches the box.

    Args:
        map_frame (np.ndarray): H x W saliency
        box (tuple): (top, left, height, width) inside the frame
        radius (float): Disc radius in pixels

    Returns:
        bool: True when the distance to the box is at most radius
    """
    map_frame = np.asarray(map_frame)
    H, W = map_frame.shape
    top, left, height, width = box
    if height < 1 or width < 1 or top < 0 or left < 0 or top + height > H or left + width > W:
        raise ValidationError(f"Box {box} does not lie within the {H}x{W} frame")
    row, col = np.unravel_index(int(np.argmax(map_frame)), map_frame.shape)
    return box_distance(int(row), int(col), box) <= radius


def spt_video(saliency, boxes, radius=7.0):
    """
    Pointing game over the frames of one video.

    Args:
        saliency (SaliencyMap or np.ndarray): T x H x W map
        boxes (GroundTruthBoxes): Per-frame boxes
        radius (float): Disc radius

    Returns:
        SPTResult: One entry per frame
    """
    values = _values(saliency)
    if len(boxes) != values.shape[0]:
        raise DimensionMismatchError(f"{len(boxes)} boxes for a {values.shape[0]}-frame map")
    hits = [None if box is None else spt_hit(values[t], box, radius) for t, box in enumerate(boxes.boxes)]
    return SPTResult(hits, radius)


def spt_score(results):
    """
    Hit rate over a dataset: all hits over all annotated frames.

    Args:
        results (list): SPTResult per video

    Returns:
        float: Hit rate in [0, 1]
    """
    annotated = sum(r.annotated for r in results)
    if annotated == 0:
        raise ValidationError("No annotated frames")
    return sum(r.hit_count for r in results) / annotated


def random_saliency(dims, seed):
    """
    I.i.d. uniform [0, 1) map.

    Args:
        dims (tuple): (T, H, W, ...) of the video
        seed (int): Random seed

    Returns:
        SaliencyMap: Random map
    """
    rng = np.random.default_rng(seed)
    return SaliencyMap(rng.random(tuple(dims[:3])), {"method": "random", "seed": seed})
