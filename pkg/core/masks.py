#!/usr/bin/env python3
"""
Mask engine for the AOSA explainability engine.
Builds spatio-temporal occlusion masks along anchor tracks, measures motion
co-occurrence between tracks, integrates co-occurring masks and estimates
the fill distributions used by conditional sampling.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import ValidationError
from utils.constants import FILL_WINDOW

logger = logging.getLogger(__name__)


class Rect(NamedTuple):
    """Axis-aligned rectangle in pixels, already clipped to the frame"""
    top: int
    left: int
    height: int
    width: int


@dataclass(frozen=True)
class MaskConfig:
    """Anchor spacing s, occlusion size h x w and integration count K"""
    s: int = 8
    h: int = 16
    w: int = 16
    K: int = 5

    def validate(self, height, width, n_anchors=None):
        if self.s < 1:
            raise ValidationError(f"Anchor spacing s must be >= 1, got {self.s}")
        if not 1 <= self.h <= height or not 1 <= self.w <= width:
            raise ValidationError(f"Occlusion {self.h}x{self.w} does not fit a {height}x{width} frame")
        if self.K < 0:
            raise ValidationError(f"K must be >= 0, got {self.K}")
        if n_anchors is not None and self.K > n_anchors - 1:
            raise ValidationError(f"K={self.K} exceeds the {n_anchors - 1} available partners")


@dataclass(frozen=True, eq=False)
class SpatioTemporalMask:
    """
    Sparse occlusion mask. rects[k][t] is the occluded rectangle of source
    anchor anchor_ids[k] at frame t, or None once that anchor left the screen.
    origins[k][t] is the unclipped top-left of the h x w patch (None for
    hand-built masks).
    """
    dims: Tuple[int, int, int, int]
    anchor_ids: Tuple[int, ...]
    rects: Tuple[Tuple[Optional[Rect], ...], ...]
    origins: Optional[Tuple[Tuple[Optional[Tuple[int, int]], ...], ...]] = None

    @classmethod
    def from_rects(cls, dims, rect_lists, anchor_ids=None):
        """
        Build a mask from per-anchor per-frame rectangles, clipping them.

        Args:
            dims (tuple): (T, H, W, C)
            rect_lists (list): One list of T entries per anchor, each a
                (top, left, height, width) tuple or None
            anchor_ids (sequence, optional): Source ids, default 0..n-1

        Returns:
            SpatioTemporalMask: The mask
        """
        T, H, W = dims[0], dims[1], dims[2]
        rects = []
        for rect_list in rect_lists:
            if len(rect_list) != T:
                raise ValidationError(f"Expected {T} per-frame rectangles, got {len(rect_list)}")
            rects.append(tuple(None if r is None else _clip(r[0], r[1], r[2], r[3], H, W) for r in rect_list))
        if anchor_ids is None:
            anchor_ids = range(len(rects))
        return cls(tuple(dims), tuple(anchor_ids), tuple(rects))

    @property
    def frames(self):
        return self.dims[0]

    def frame_rects(self, t):
        """All rectangles occluded at frame t"""
        return [r[t] for r in self.rects if r[t] is not None]

    def occluded(self):
        """
        Boolean occlusion volume.

        Returns:
            np.ndarray: (T, H, W) bool, True inside any rectangle
        """
        T, H, W = self.dims[0], self.dims[1], self.dims[2]
        occ = np.zeros((T, H, W), dtype=bool)
        for rect_list in self.rects:
            for t, r in enumerate(rect_list):
                if r is not None:
                    occ[t, r.top:r.top + r.height, r.left:r.left + r.width] = True
        return occ

    def rasterize(self, channels=False):
        """
        Binary mask: 0 inside the occluded rectangles, 1 elsewhere.

        Args:
            channels (bool): Return T x H x W x C instead of T x H x W

        Returns:
            np.ndarray: float64 mask
        """
        raster = 1.0 - self.occluded().astype(np.float64)
        if channels:
            return np.repeat(raster[..., None], self.dims[3], axis=3)
        return raster

    def occluded_count(self):
        return int(self.occluded().sum())


def _clip(top, left, height, width, H, W):
    r0, r1 = max(int(top), 0), min(int(top) + int(height), H)
    c0, c1 = max(int(left), 0), min(int(left) + int(width), W)
    if r0 >= r1 or c0 >= c1:
        return None
    return Rect(r0, c0, r1 - r0, c1 - c0)


def round_half_up(value):
    return int(math.floor(value + 0.5))


def place_anchor_grid(H, W, s):
    """
    Equally spaced anchor grid, cell-centred.

    Args:
        H, W (int): Frame size
        s (int): Spacing in pixels

    Returns:
        np.ndarray: (floor(H/s) * floor(W/s), 2) anchors in row-major order
    """
    if s < 1:
        raise ValidationError(f"Anchor spacing must be >= 1, got {s}")
    if s > min(H, W):
        raise ValidationError(f"Anchor spacing {s} exceeds the frame size {H}x{W}")
    rows = s / 2.0 + s * np.arange(H // s)
    cols = s / 2.0 + s * np.arange(W // s)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([grid_r.ravel(), grid_c.ravel()], axis=1)


def build_mask(track, cfg, dims):
    """
    Spatio-temporal mask of one anchor track: an h x w rectangle centred on
    the rounded anchor position at every frame the anchor is alive.

    Args:
        track (AnchorTrack): Anchor trajectory
        cfg (MaskConfig): Occlusion size
        dims (tuple): (T, H, W, C)

    Returns:
        SpatioTemporalMask: Single-anchor mask
    """
    T, H, W = dims[0], dims[1], dims[2]
    rects, origins = [], []
    for t in range(T):
        if not track.alive_at(t):
            rects.append(None)
            origins.append(None)
            continue
        row, col = track.positions[t]
        top = round_half_up(row) - cfg.h // 2
        left = round_half_up(col) - cfg.w // 2
        rects.append(_clip(top, left, cfg.h, cfg.w, H, W))
        origins.append((top, left))
    return SpatioTemporalMask(tuple(dims), (track.anchor_id,), (tuple(rects),), (tuple(origins),))


def co_occurrence(a, b):
    """
    Cosine similarity of two tracks' displacement vectors over their common
    alive prefix; 0 when either vector vanishes or no displacement is shared.

    Args:
        a, b (AnchorTrack): Tracks

    Returns:
        float: Co-occurrence in [-1, 1]
    """
    n = min(a.alive_until, b.alive_until) - 1
    if n < 1:
        return 0.0
    va = a.displacement[:2 * n]
    vb = b.displacement[:2 * n]
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def co_occurrence_matrix(tracks):
    """
    All pairwise co-occurrences, with the same prefix rule as co_occurrence.

    Args:
        tracks (list): AnchorTrack list

    Returns:
        np.ndarray: (N, N) symmetric matrix
    """
    n = len(tracks)
    steps = max(tr.alive_until for tr in tracks) - 1
    lengths = np.array([tr.alive_until - 1 for tr in tracks])
    disp = np.zeros((n, max(steps, 1), 2))
    for i, tr in enumerate(tracks):
        if lengths[i] > 0:
            disp[i, :lengths[i]] = np.diff(tr.positions, axis=0)

    flat = disp.reshape(n, -1)
    # entries past either track's end are zero, so the full dot is the prefix dot
    dots = flat @ flat.T
    sq = np.sum(disp ** 2, axis=2)
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(sq, axis=1)], axis=1)
    common = np.minimum.outer(lengths, lengths)
    rows = np.arange(n)
    norm_a = np.sqrt(cum[rows[:, None], common])
    norm_b = np.sqrt(cum[rows[None, :], common])
    denom = norm_a * norm_b
    valid = (common >= 1) & (denom > 0)
    co = np.zeros((n, n))
    co[valid] = dots[valid] / denom[valid]
    return np.clip(co, -1.0, 1.0)


def top_partners(i, co_row, K):
    """
    Ids of the K tracks co-occurring most with track i; ties go to the
    lower id.

    Args:
        i (int): Track id
        co_row (np.ndarray): Co-occurrence of track i with every track
        K (int): Partner count

    Returns:
        list: Partner ids
    """
    if K <= 0:
        return []
    ids = np.array([j for j in range(len(co_row)) if j != i], dtype=int)
    order = np.lexsort((ids, -np.asarray(co_row)[ids]))
    return ids[order[:K]].tolist()


def integrate_masks(i, tracks, masks, K, co_matrix=None):
    """
    Integrated mask of anchor i: the product of its own mask with those of
    its K most co-occurring partners, i.e. the union of their rectangles.

    Args:
        i (int): Anchor id
        tracks (list): AnchorTrack list indexed by id
        masks (list): Single-anchor masks indexed by id
        K (int): Partner count
        co_matrix (np.ndarray, optional): Precomputed co_occurrence_matrix

    Returns:
        SpatioTemporalMask: Mask holding K + 1 rectangle lists
    """
    if K > len(tracks) - 1:
        raise ValidationError(f"K={K} exceeds the {len(tracks) - 1} available partners")
    if co_matrix is not None:
        co_row = co_matrix[i]
    else:
        co_row = np.array([co_occurrence(tracks[i], tr) for tr in tracks])
    members = [i] + top_partners(i, co_row, K)
    base = masks[i]
    return SpatioTemporalMask(
        base.dims,
        tuple(masks[j].anchor_ids[0] for j in members),
        tuple(masks[j].rects[0] for j in members),
        tuple(masks[j].origins[0] for j in members) if base.origins is not None else None,
    )


def build_integrated_masks(tracks, cfg, dims):
    """
    Single-anchor masks for every track and their integrated forms.

    Args:
        tracks (list): AnchorTrack list indexed by id
        cfg (MaskConfig): Mask settings
        dims (tuple): (T, H, W, C)

    Returns:
        tuple: (single masks, integrated masks)
    """
    cfg.validate(dims[1], dims[2], len(tracks))
    singles = [build_mask(tr, cfg, dims) for tr in tracks]
    if cfg.K == 0:
        return singles, list(singles)
    co = co_occurrence_matrix(tracks)
    integrated = [integrate_masks(i, tracks, singles, cfg.K, co) for i in range(len(tracks))]
    logger.info(f"Integrated {len(integrated)} masks with K={cfg.K}")
    return singles, integrated


@dataclass(frozen=True, eq=False)
class FillDistribution:
    """Per-pixel, per-channel normal distribution for one (anchor, frame) patch"""
    mean: np.ndarray
    var: np.ndarray
    anchor_id: int = -1
    frame: int = -1
    candidates: int = 0

    def sample(self, rng):
        return self.mean + np.sqrt(self.var) * rng.standard_normal(self.mean.shape)


def fill_distribution(video, track, t, cfg, window=FILL_WINDOW):
    """
    Mean and variance of the h x w patches that lie inside the window
    centred on the anchor, contain the anchor pixel and differ from the
    occlusion patch itself.

    Args:
        video (VideoTensor): Input video
        track (AnchorTrack): Anchor trajectory, alive at frame t
        t (int): Frame index (0-based)
        cfg (MaskConfig): Occlusion size
        window (int): Side of the square search window

    Returns:
        FillDistribution: Patch statistics of shape (h, w, C)
    """
    if not track.alive_at(t):
        raise ValidationError(f"Anchor {track.anchor_id} is not alive at frame {t}")
    H, W, C = video.height, video.width, video.channels
    h, w = cfg.h, cfg.w
    frame = video.data[t].astype(np.float64)
    cr, cc = (round_half_up(v) for v in track.positions[t])
    cr, cc = min(max(cr, 0), H - 1), min(max(cc, 0), W - 1)
    half = window // 2
    win_r0, win_r1 = cr - half, cr - half + window
    win_c0, win_c1 = cc - half, cc - half + window

    r_lo = max(win_r0, 0, cr - h + 1)
    r_hi = min(win_r1 - h, H - h, cr)
    c_lo = max(win_c0, 0, cc - w + 1)
    c_hi = min(win_c1 - w, W - w, cc)

    patches = None
    if r_lo <= r_hi and c_lo <= c_hi:
        views = sliding_window_view(frame, (h, w), axis=(0, 1))
        block = views[r_lo:r_hi + 1, c_lo:c_hi + 1]
        keep = np.ones(block.shape[:2], dtype=bool)
        own_r, own_c = cr - h // 2 - r_lo, cc - w // 2 - c_lo
        if 0 <= own_r < keep.shape[0] and 0 <= own_c < keep.shape[1]:
            keep[own_r, own_c] = False
        patches = block[keep]

    if patches is None or len(patches) < 2:
        region = frame[max(win_r0, 0):min(win_r1, H), max(win_c0, 0):min(win_c1, W)].reshape(-1, C)
        logger.debug(f"Anchor {track.anchor_id} frame {t}: window-wide fill statistics")
        mean = np.broadcast_to(region.mean(axis=0), (h, w, C)).copy()
        var = np.broadcast_to(region.var(axis=0), (h, w, C)).copy()
        return FillDistribution(mean, var, track.anchor_id, t, 0 if patches is None else len(patches))

    # patches: (n, C, h, w)
    mean = patches.mean(axis=0).transpose(1, 2, 0)
    var = patches.var(axis=0).transpose(1, 2, 0)
    return FillDistribution(mean, np.maximum(var, 0.0), track.anchor_id, t, len(patches))


def fill_distributions(video, tracks, cfg):
    """
    Fill distributions for every anchor at every frame it is alive.

    Returns:
        dict: (anchor id, frame) -> FillDistribution
    """
    dists = {}
    for tr in tracks:
        for t in range(tr.alive_until):
            dists[(tr.anchor_id, t)] = fill_distribution(video, tr, t, cfg)
    logger.info(f"Estimated {len(dists)} fill distributions")
    return dists
