#!/usr/bin/env python3
"""
Saliency module for the AOSA explainability engine.
Computes occlusion-sensitivity maps with flow-adaptive masks (exact and
first-order approximated), the fixed-cuboid baseline, conditional fill
scoring and the interquartile adjustment of approximated scores.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from tqdm import tqdm

from core.errors import ValidationError
from core.flow import FlowParams, track_anchors
from core.masks import (MaskConfig, SpatioTemporalMask, build_integrated_masks,
                        fill_distributions, place_anchor_grid, round_half_up)
from core.model import check_score_mode

logger = logging.getLogger(__name__)

METHOD_EXACT = "exact"
METHOD_APPROX = "approx"
FILL_CONST = "const"
FILL_COND = "cond"

IQR_FENCE = 1.5


@dataclass(frozen=True)
class SaliencyConfig:
    """
    Settings of one saliency run. target_class None explains the model's
    top class on the clean input; score_mode None uses the model's mode.
    """
    method: str = METHOD_EXACT
    fill: str = FILL_CONST
    fill_value: float = 0.0
    masks: MaskConfig = field(default_factory=MaskConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    target_class: Optional[int] = None
    score_mode: Optional[str] = None
    normalize_coverage: bool = False
    mc_samples: int = 8
    seed: int = 0
    adjust: bool = True

    def validate(self):
        if self.method not in (METHOD_EXACT, METHOD_APPROX):
            raise ValidationError(f"Unknown method '{self.method}'")
        if self.fill not in (FILL_CONST, FILL_COND):
            raise ValidationError(f"Unknown fill '{self.fill}'")
        if not np.isfinite(self.fill_value):
            raise ValidationError(f"Fill value must be finite, got {self.fill_value}")
        if self.fill == FILL_COND and self.method == METHOD_EXACT and self.mc_samples < 1:
            raise ValidationError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if self.target_class is not None and self.target_class < 0:
            raise ValidationError(f"Target class must be >= 0, got {self.target_class}")
        if self.score_mode is not None:
            check_score_mode(self.score_mode)
        self.flow.validate()


@dataclass
class MaskScoreRecord:
    """Score of one occluded input and its difference from the clean score"""
    mask_id: int
    score: float
    difference: float
    adjusted: bool = False


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """T x H x W importance volume with provenance"""
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    records: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValidationError(f"A saliency map must have rank 3, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("Saliency map holds non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dims(self):
        return self.values.shape


def _input(video):
    data = video if isinstance(video, np.ndarray) else video.data
    return np.asarray(data, dtype=np.float64)


def fill_field(x, mask, dists):
    """
    Input-shaped array holding the conditional mean of every occluded patch
    of the mask. Later anchors overwrite earlier ones where patches overlap.

    Args:
        x (np.ndarray): Clean input (T, H, W, C)
        mask (SpatioTemporalMask): Mask with patch origins
        dists (dict): (anchor id, frame) -> FillDistribution

    Returns:
        np.ndarray: Field equal to x outside the mask
    """
    return _paint(x, mask, dists, lambda dist: dist.mean)


def sample_field(x, mask, dists, rng):
    """Like fill_field, with one independent draw per (anchor, frame)"""
    return _paint(x, mask, dists, lambda dist: dist.sample(rng))


def _paint(x, mask, dists, patch_of):
    if mask.origins is None:
        raise ValidationError("Conditional fill needs masks built from anchor tracks")
    out = x.copy()
    for anchor_id, rects, origins in zip(mask.anchor_ids, mask.rects, mask.origins):
        for t, (rect, origin) in enumerate(zip(rects, origins)):
            if rect is None:
                continue
            patch = patch_of(dists[(anchor_id, t)])
            r0, c0 = rect.top - origin[0], rect.left - origin[1]
            out[t, rect.top:rect.top + rect.height, rect.left:rect.left + rect.width] = \
                patch[r0:r0 + rect.height, c0:c0 + rect.width]
    return out


def occluded_input(x, mask, fill):
    """
    g(x): the input with the mask's rectangles replaced by the fill.

    Args:
        x (np.ndarray): Clean input (T, H, W, C)
        mask (SpatioTemporalMask): Occlusion mask
        fill (float or np.ndarray): Constant value or input-shaped field
    """
    out = x.copy()
    occ = mask.occluded()
    if np.ndim(fill) == 0:
        out[occ] = fill
    else:
        out[occ] = fill[occ]
    return out


def approx_score(f_x, J_x, video, mask, fill):
    """
    First-order estimate of the score of the occluded input,
    f(x) + <J_x, (1 - M) * (fill - x)>, summed over occluded entries only.

    Args:
        f_x (float): Score of the clean input
        J_x (np.ndarray): Score gradient at x, shaped like the input
        video (VideoTensor or np.ndarray): Clean input
        mask (SpatioTemporalMask): Occlusion mask
        fill (float or np.ndarray): Constant value or input-shaped field

    Returns:
        float: Approximated score f'(g(x))
    """
    x = _input(video)
    if J_x.shape != x.shape:
        raise ValidationError(f"Gradient shape {J_x.shape} differs from input {x.shape}")
    occ = mask.occluded()
    target = fill if np.ndim(fill) == 0 else fill[occ]
    return float(f_x + np.sum(J_x[occ] * (target - x[occ]), dtype=np.float64))


def conditional_approx_score(J_x, video, mask, mu):
    """
    Closed-form importance of a mask under conditional fill,
    S_M = <J_x, (1 - M) * (x - mu)>. The approximated expected score is
    f(x) - S_M.

    Args:
        J_x (np.ndarray): Score gradient at x
        video (VideoTensor or np.ndarray): Clean input
        mask (SpatioTemporalMask): Occlusion mask
        mu (np.ndarray): Input-shaped conditional mean field (see fill_field)

    Returns:
        float: S_M
    """
    return -approx_score(0.0, J_x, video, mask, mu)


def exact_conditional_score(model, video, mask, dists, n_samples, seed, class_id,
                            f_x=None, score_mode=None):
    """
    Monte Carlo importance under conditional fill: f(x) minus the mean score
    of n_samples occluded inputs whose patches are drawn per frame.

    Args:
        model (ScoreModel): Classifier
        video (VideoTensor): Clean input
        mask (SpatioTemporalMask): Occlusion mask with patch origins
        dists (dict): (anchor id, frame) -> FillDistribution
        n_samples (int): Number of draws
        seed (int or np.random.Generator): Randomness source
        class_id (int): Explained class
        f_x (float, optional): Clean score, computed when omitted

    Returns:
        float: S_M
    """
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    x = _input(video)
    rng = np.random.default_rng(seed)
    if f_x is None:
        f_x = model.forward(x, score_mode)[class_id]
    total = 0.0
    for _ in range(n_samples):
        total += model.forward(sample_field(x, mask, dists, rng), score_mode)[class_id]
    return float(f_x - total / n_samples)


def iqr_outliers(values):
    """
    Indices of values outside the 1.5 x IQR fences. Quartiles interpolate
    between order statistics at rank (n + 1) p.

    Args:
        values (sequence): Reals

    Returns:
        tuple: (low ids, high ids), both empty for fewer than 4 values
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 4:
        return [], []
    q1, q3 = np.percentile(values, [25, 75], method="weibull")
    iqr = q3 - q1
    low_fence, high_fence = q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr
    logger.debug(f"IQR fences [{low_fence:.6g}, {high_fence:.6g}]")
    return np.flatnonzero(values < low_fence).tolist(), np.flatnonzero(values > high_fence).tolist()


def adjust_importances(records, model, video, masks, class_id, fill, f_x, score_mode=None):
    """
    Re-linearize the approximated scores of outlying masks at the most
    extreme occluded input of their side.

    High outliers use x*_hi, the occluded input with the largest difference
    amount; low outliers use x*_lo with the smallest. Each side costs one
    forward and one gradient, and only when it has outliers.

    Args:
        records (list): MaskScoreRecord per mask, in mask order
        model (ScoreModel): Classifier
        video (VideoTensor): Clean input
        masks (list): Masks matching the records
        class_id (int): Explained class
        fill (float or callable): Constant, or mask -> input-shaped field
        f_x (float): Clean score
        score_mode (str, optional): Score mode

    Returns:
        list: Updated records (new objects)
    """
    differences = [r.difference for r in records]
    low, high = iqr_outliers(differences)
    records = list(records)
    if not low and not high:
        return records
    x = _input(video)

    def fill_of(mask):
        return fill(mask) if callable(fill) else fill

    for ids, pick in ((high, np.argmax), (low, np.argmin)):
        if not ids:
            continue
        star = int(pick(differences))
        star_fill = fill_of(masks[star])
        x_star = occluded_input(x, masks[star], star_fill)
        f_star = model.forward(x_star, score_mode)[class_id]
        J_star = model.gradient(x_star, class_id, score_mode)
        # <J*, g_i - x*> = <J*, g_i - x> - <J*, x* - x>
        shift = float(np.sum(J_star * (x_star - x), dtype=np.float64))
        for i in ids:
            score = approx_score(f_star, J_star, x, masks[i], fill_of(masks[i])) - shift
            records[i] = replace(records[i], score=score, difference=f_x - score, adjusted=True)
        logger.info(f"Adjusted {len(ids)} masks around mask {star}")
    return records


def aggregate(masks, scores, dims, normalize_coverage=False):
    """
    S = (1 / N) sum_i score_i * raster_i, accumulated in mask order.

    Args:
        masks (list): Masks
        scores (sequence): One score per mask
        dims (tuple): (T, H, W, ...)
        normalize_coverage (bool): Divide each pixel by the fraction of
            masks leaving it visible (0 where every mask covers it)

    Returns:
        np.ndarray: (T, H, W) float64
    """
    T, H, W = dims[0], dims[1], dims[2]
    total = np.zeros((T, H, W))
    visible = np.zeros((T, H, W))
    for mask, score in zip(masks, scores):
        raster = mask.rasterize()
        total += score * raster
        visible += raster
    n = len(masks)
    if n == 0:
        raise ValidationError("No masks to aggregate")
    values = total / n
    if normalize_coverage:
        fraction = visible / n
        values = np.divide(values, fraction, out=np.zeros_like(values), where=fraction > 0)
    return values


def build_masks(video, cfg, flows=None):
    """
    Track the anchor grid and build single and integrated masks.

    Returns:
        tuple: (tracks, single masks, integrated masks)
    """
    anchors = place_anchor_grid(video.height, video.width, cfg.masks.s)
    tracks = track_anchors(video, anchors, cfg.flow, flows)
    singles, integrated = build_integrated_masks(tracks, cfg.masks, video.dims)
    return tracks, singles, integrated


def cuboid_masks(dims, occ=(8, 16, 16), strides=(2, 8, 8)):
    """
    Fixed cuboids on a regular grid: temporal starts k * stride_t while the
    cuboid fits, spatial centres on the anchor grid of the spatial stride.

    Args:
        dims (tuple): (T, H, W, C)
        occ (tuple): Cuboid (frames, height, width)
        strides (tuple): (temporal, vertical, horizontal) strides

    Returns:
        list: SpatioTemporalMask per position, time-major order
    """
    T, H, W = dims[0], dims[1], dims[2]
    occ_t, occ_h, occ_w = occ
    st, sr, sc = strides
    if not 1 <= occ_t <= T or not 1 <= occ_h <= H or not 1 <= occ_w <= W:
        raise ValidationError(f"Cuboid {occ} does not fit input {dims}")
    if min(strides) < 1:
        raise ValidationError(f"Strides must be >= 1, got {strides}")
    if sr > H or sc > W:
        raise ValidationError(f"Spatial strides {strides[1:]} exceed the frame size {H}x{W}")
    starts = [k * st for k in range((T - occ_t) // st + 1)]
    centres_r = [sr / 2.0 + i * sr for i in range(H // sr)]
    centres_c = [sc / 2.0 + j * sc for j in range(W // sc)]
    masks = []
    for t0 in starts:
        for cr in centres_r:
            for cc in centres_c:
                rect = (round_half_up(cr) - occ_h // 2, round_half_up(cc) - occ_w // 2, occ_h, occ_w)
                rects = [rect if t0 <= t < t0 + occ_t else None for t in range(T)]
                masks.append(SpatioTemporalMask.from_rects(dims, [rects], [len(masks)]))
    return masks


def _target(model, x, cfg, mode):
    scores = model.forward(x, mode)
    class_id = int(np.argmax(scores)) if cfg.target_class is None else int(cfg.target_class)
    if class_id >= model.n_classes:
        raise ValidationError(f"Class {class_id} out of range for {model.n_classes} classes")
    return class_id, float(scores[class_id])


def _metadata(method, cfg, mode, class_id, model, n_masks, before):
    forwards, backwards = model.counter.snapshot()
    return {
        "method": method,
        "s": cfg.masks.s,
        "h": cfg.masks.h,
        "w": cfg.masks.w,
        "K": cfg.masks.K,
        "fill": cfg.fill,
        "fill_value": cfg.fill_value,
        "score_mode": mode,
        "class": class_id,
        "seed": cfg.seed,
        "forwards": forwards - before[0],
        "backwards": backwards - before[1],
        "model": model.model_id,
        "n_masks": n_masks,
    }


def score_masks_exact(model, video, masks, class_id, f_x, cfg, mode, dists=None):
    """
    Exact score of every occluded input, in mask order.

    Returns:
        list: MaskScoreRecord per mask
    """
    x = _input(video)
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i, mask in enumerate(tqdm(masks, desc="Scoring masks", disable=None, leave=False)):
        if cfg.fill == FILL_COND:
            importance = exact_conditional_score(model, x, mask, dists, cfg.mc_samples,
                                                 rng, class_id, f_x, mode)
            score = f_x - importance
        else:
            score = float(model.forward(occluded_input(x, mask, cfg.fill_value), mode)[class_id])
        records.append(MaskScoreRecord(i, score, f_x - score))
        logger.debug(f"Mask {i}: score {score:.6g}")
    return records


def aosa_map(video, model, cfg=None, flows=None, masks=None, dists=None):
    """
    Exact flow-adaptive occlusion map: every integrated mask is scored with
    a forward pass and the scores weight the masks.

    Args:
        video (VideoTensor): Input video
        model (ScoreModel): Classifier
        cfg (SaliencyConfig, optional): Settings; method must be exact
        flows (np.ndarray, optional): Dense flow (T-1, H, W, 2) to track with
        masks (list, optional): Prebuilt masks, skipping tracking
        dists (dict, optional): Fill distributions for prebuilt masks

    Returns:
        SaliencyMap: Map with per-mask records and call counts
    """
    cfg = cfg or SaliencyConfig()
    cfg.validate()
    if cfg.method != METHOD_EXACT:
        raise ValidationError(f"aosa_map needs method '{METHOD_EXACT}', got '{cfg.method}'")
    mode = cfg.score_mode or model.score_mode
    before = model.counter.snapshot()
    x = _input(video)
    class_id, f_x = _target(model, x, cfg, mode)

    if masks is None:
        tracks, _, masks = build_masks(video, cfg, flows)
        if cfg.fill == FILL_COND:
            dists = fill_distributions(video, tracks, cfg.masks)
    elif cfg.fill == FILL_COND and dists is None:
        raise ValidationError("Conditional fill with prebuilt masks needs fill distributions")

    records = score_masks_exact(model, video, masks, class_id, f_x, cfg, mode, dists)
    values = aggregate(masks, [r.score for r in records], video.dims, cfg.normalize_coverage)
    meta = _metadata("aosa" if cfg.masks.K > 0 else "aosa_sgl", cfg, mode, class_id, model, len(masks), before)
    logger.info(f"AOSA map over {len(masks)} masks: {meta['forwards']} forwards, {meta['backwards']} backwards")
    return SaliencyMap(values, meta, tuple(records))


def approx_map(video, model, cfg=None, flows=None, masks=None, dists=None):
    """
    Approximated occlusion map: scores of the occluded inputs come from a
    first-order expansion at the clean input, optionally re-linearized for
    outlying masks, and are aggregated like the exact map.

    Args:
        video (VideoTensor): Input video
        model (ScoreModel): Classifier
        cfg (SaliencyConfig, optional): Settings; method must be approx
        flows (np.ndarray, optional): Dense flow to track with
        masks (list, optional): Prebuilt masks, skipping tracking
        dists (dict, optional): Fill distributions for prebuilt masks

    Returns:
        SaliencyMap: Map with per-mask records and call counts
    """
    cfg = cfg or SaliencyConfig(method=METHOD_APPROX)
    cfg.validate()
    if cfg.method != METHOD_APPROX:
        raise ValidationError(f"approx_map needs method '{METHOD_APPROX}', got '{cfg.method}'")
    mode = cfg.score_mode or model.score_mode
    before = model.counter.snapshot()
    x = _input(video)
    class_id, f_x = _target(model, x, cfg, mode)
    J_x = model.gradient(x, class_id, mode)

    if masks is None:
        tracks, _, masks = build_masks(video, cfg, flows)
        if cfg.fill == FILL_COND:
            dists = fill_distributions(video, tracks, cfg.masks)
    elif cfg.fill == FILL_COND and dists is None:
        raise ValidationError("Conditional fill with prebuilt masks needs fill distributions")

    records = []
    if cfg.fill == FILL_COND:
        fill = lambda mask: fill_field(x, mask, dists)  # noqa: E731
        for i, mask in enumerate(masks):
            importance = conditional_approx_score(J_x, x, mask, fill(mask))
            records.append(MaskScoreRecord(i, f_x - importance, importance))
    else:
        fill = cfg.fill_value
        # per-pixel contribution J * (fill - x), summed over channels
        contribution = np.sum(J_x * (fill - x), axis=-1)
        for i, mask in enumerate(masks):
            score = float(f_x + np.sum(contribution[mask.occluded()], dtype=np.float64))
            records.append(MaskScoreRecord(i, score, f_x - score))

    if cfg.adjust:
        records = adjust_importances(records, model, x, masks, class_id, fill, f_x, mode)

    values = aggregate(masks, [r.score for r in records], video.dims, cfg.normalize_coverage)
    name = "aosa_approx" if cfg.masks.K > 0 else "aosa_sgl_approx"
    meta = _metadata(name, cfg, mode, class_id, model, len(masks), before)
    meta["adjust"] = cfg.adjust
    meta["adjusted"] = sum(1 for r in records if r.adjusted)
    logger.info(f"Approximated map over {len(masks)} masks: {meta['forwards']} forwards, "
                f"{meta['backwards']} backwards, {meta['adjusted']} adjusted")
    return SaliencyMap(values, meta, tuple(records))


def cuboid_osa_map(video, model, occ=(8, 16, 16), strides=(2, 8, 8), cfg=None):
    """
    Baseline occlusion map with fixed cuboids, aggregated like the AOSA map.
    Occluded entries take the constant fill value of the config.

    Args:
        video (VideoTensor): Input video
        model (ScoreModel): Classifier
        occ (tuple): Cuboid (frames, height, width)
        strides (tuple): (temporal, vertical, horizontal) strides
        cfg (SaliencyConfig, optional): Fill value, class, score mode

    Returns:
        SaliencyMap: Baseline map
    """
    cfg = cfg or SaliencyConfig()
    if cfg.fill != FILL_CONST:
        cfg = replace(cfg, fill=FILL_CONST)
    mode = cfg.score_mode or model.score_mode
    before = model.counter.snapshot()
    x = _input(video)
    class_id, f_x = _target(model, x, cfg, mode)
    masks = cuboid_masks(video.dims, occ, strides)
    records = score_masks_exact(model, video, masks, class_id, f_x, cfg, mode)
    values = aggregate(masks, [r.score for r in records], video.dims, cfg.normalize_coverage)
    meta = _metadata("cuboid", cfg, mode, class_id, model, len(masks), before)
    meta.update({"h": occ[1], "w": occ[2], "s": strides[1], "K": 0, "occ_t": occ[0], "stride_t": strides[0]})
    logger.info(f"Cuboid OSA map over {len(masks)} cuboids: {meta['forwards']} forwards")
    return SaliencyMap(values, meta, tuple(records))


def explain(video, model, cfg, flows=None):
    """Dispatch to the exact or approximated AOSA map"""
    if cfg.method == METHOD_APPROX:
        return approx_map(video, model, cfg, flows)
    return aosa_map(video, model, cfg, flows)
