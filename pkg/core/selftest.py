#!/usr/bin/env python3
"""
Self-test module for the AOSA explainability engine.
Runs the gradient-check, affine-equivalence and brute-force-map checks on
small random problems.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.cnn import Tiny3DCNN
from core.masks import MaskConfig, SpatioTemporalMask
from core.model import AffineModel
from core.saliency import METHOD_APPROX, SaliencyConfig, aosa_map, approx_map
from core.video import VideoTensor
from utils.constants import SCORE_LOGIT

logger = logging.getLogger(__name__)

GRADIENT_EPS = 1e-5
GRADIENT_TOLERANCE = 1e-4
GRADIENT_MODELS = 10
GRADIENT_COORDS = 100
BRUTE_FORCE_TRIALS = 20
RELATIVE_FLOOR = 1e-7
AFFINE_TOLERANCE = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _relative(a, b):
    return abs(a - b) / max(abs(a), abs(b), RELATIVE_FLOOR)


def finite_difference_errors(model, x, class_id, n_coords, rng, eps=GRADIENT_EPS, score_mode=None):
    """
    Relative errors between the analytic gradient and central differences
    at random coordinates.

    Coordinates whose one-sided differences disagree by more than
    GRADIENT_TOLERANCE straddle a ReLU or max-pool switch and are redrawn.

    Args:
        model (ScoreModel): Model under test
        x (np.ndarray): Input (T, H, W, C)
        class_id (int): Differentiated class
        n_coords (int): Number of checked coordinates
        rng (np.random.Generator): Coordinate sampler
        eps (float): Finite-difference step

    Returns:
        np.ndarray: Relative error per coordinate, at most n_coords of them
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = model.gradient(x, class_id, score_mode)
    f_x = model.forward(x, score_mode)[class_id]
    errors = []
    redrawn = 0
    for index in rng.permutation(x.size):
        if len(errors) == n_coords:
            break
        coord = np.unravel_index(index, x.shape)
        plus, minus = x.copy(), x.copy()
        plus[coord] += eps
        minus[coord] -= eps
        right = (model.forward(plus, score_mode)[class_id] - f_x) / eps
        left = (f_x - model.forward(minus, score_mode)[class_id]) / eps
        if _relative(right, left) > GRADIENT_TOLERANCE:
            redrawn += 1
            continue
        errors.append(_relative(analytic[coord], (right + left) / 2))
    if redrawn:
        logger.debug(f"Redrew {redrawn} coordinates at activation switches")
    return np.array(errors)


def check_gradient(seed=0, n_models=GRADIENT_MODELS, n_coords=GRADIENT_COORDS):
    rng = np.random.default_rng(seed)
    errors = []
    for k in range(n_models):
        model = Tiny3DCNN(3, channels=1, input_dims=(4, 6, 6, 1), seed=seed + k, score_mode=SCORE_LOGIT)
        x = rng.normal(size=(4, 6, 6, 1))
        errors.append(finite_difference_errors(model, x, int(rng.integers(3)), n_coords, rng))
    errors = np.concatenate(errors)
    worst = float(errors.max())
    passed = len(errors) == n_models * n_coords and worst <= GRADIENT_TOLERANCE
    return CheckResult("gradient", passed, f"{len(errors)} coordinates, worst relative error {worst:.3e}")


def check_affine(seed=0):
    dims = (4, 16, 16, 3)
    rng = np.random.default_rng(seed)
    video = VideoTensor(rng.random(dims).astype(np.float32))
    model = AffineModel.random(4, dims, seed)
    cfg = SaliencyConfig(masks=MaskConfig(s=4, h=6, w=6, K=2), seed=seed)
    exact = aosa_map(video, model, cfg)
    approx = approx_map(video, model, SaliencyConfig(method=METHOD_APPROX, masks=cfg.masks, seed=seed))
    gap = float(np.max(np.abs(exact.values - approx.values)))
    return CheckResult("affine", gap <= AFFINE_TOLERANCE, f"max map difference {gap:.3e}")


def random_masks(rng, dims, count):
    """Up to count masks of one random rectangle per frame (or none)"""
    T, H, W = dims[0], dims[1], dims[2]
    masks = []
    for _ in range(count):
        rects = []
        for _ in range(T):
            if rng.random() < 0.2:
                rects.append(None)
                continue
            h, w = int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1))
            rects.append((int(rng.integers(-2, H)), int(rng.integers(-2, W)), h, w))
        masks.append(SpatioTemporalMask.from_rects(dims, [rects]))
    return masks


def brute_force_map(video, model, masks, class_id, fill_value=0.0):
    """Per-pixel reference for the aggregated map"""
    x = np.asarray(video.data, dtype=np.float64)
    T, H, W = x.shape[:3]
    scores = []
    for mask in masks:
        keep = np.ones((T, H, W))
        for rect_list in mask.rects:
            for t, r in enumerate(rect_list):
                if r is None:
                    continue
                for row in range(r.top, r.top + r.height):
                    for col in range(r.left, r.left + r.width):
                        keep[t, row, col] = 0.0
        occluded = x * keep[..., None] + (1.0 - keep[..., None]) * fill_value
        scores.append((model.forward(occluded)[class_id], keep))
    out = np.zeros((T, H, W))
    for t in range(T):
        for row in range(H):
            for col in range(W):
                out[t, row, col] = sum(s * keep[t, row, col] for s, keep in scores) / len(scores)
    return out


def check_brute_force(seed=0, trials=BRUTE_FORCE_TRIALS):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        dims = (2, 8, 8, 1)
        video = VideoTensor(rng.random(dims).astype(np.float32))
        model = AffineModel.random(3, dims, seed + trial)
        masks = random_masks(rng, dims, int(rng.integers(1, 5)))
        smap = aosa_map(video, model, SaliencyConfig(target_class=0), masks=masks)
        worst = max(worst, float(np.max(np.abs(smap.values - brute_force_map(video, model, masks, 0)))))
    return CheckResult("brute_force", worst <= AFFINE_TOLERANCE, f"{trials} videos, max difference {worst:.3e}")


def run_selftest(seed=0):
    """
    Run every check.

    Returns:
        list: CheckResult per check
    """
    results = []
    for check in (check_gradient, check_affine, check_brute_force):
        result = check(seed)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{result.name}: {'ok' if result.passed else 'FAILED'} ({result.detail})")
        results.append(result)
    return results
