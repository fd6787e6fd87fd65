#!/usr/bin/env python3
"""
Optical flow module for the AOSA explainability engine.
Tracks anchor points through a video with sparse pyramidal Lucas-Kanade,
or by sampling an externally supplied dense flow field.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from core.errors import DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)

# Near-singular structure matrix: smallest eigenvalue below this times the
# window area, or below CONDITION_RATIO times the largest eigenvalue
SINGULAR_EIGEN_FLOOR = 1e-6
CONDITION_RATIO = 1e-4


@dataclass(frozen=True)
class FlowParams:
    """Pyramidal Lucas-Kanade settings"""
    levels: int = 3
    window_radius: int = 7
    max_iterations: int = 10
    epsilon: float = 0.01

    def validate(self):
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.window_radius < 1:
            raise ValidationError(f"window_radius must be >= 1, got {self.window_radius}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True, eq=False)
class AnchorTrack:
    """
    Trajectory of one anchor. positions[t] is the (row, col) position at
    frame t (0-based) for every frame the anchor stays on screen.
    """
    anchor_id: int
    positions: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(positions) < 1:
            raise ValidationError("A track needs at least one position")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def alive_until(self):
        """Number of frames with a valid position (1-based last valid frame)"""
        return len(self.positions)

    @property
    def displacement(self):
        """Concatenated consecutive position differences, length 2(alive_until - 1)"""
        return np.diff(self.positions, axis=0).reshape(-1)

    def alive_at(self, t):
        return 0 <= t < len(self.positions)


def build_pyramid(frame, levels):
    """
    Build an image pyramid by repeated 2x2 box averaging.

    Args:
        frame (np.ndarray): 2-D grayscale image
        levels (int): Number of levels, level 0 is the input

    Returns:
        list: Images from finest to coarsest
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValidationError(f"Pyramid input must be 2-D, got shape {frame.shape}")
    if levels < 1:
        raise ValidationError(f"levels must be >= 1, got {levels}")
    min_side = 2 ** (levels - 1)
    if frame.shape[0] < min_side or frame.shape[1] < min_side:
        raise ValidationError(f"Image {frame.shape} too small for {levels} pyramid levels")

    pyramid = [frame]
    for _ in range(1, levels):
        prev = pyramid[-1]
        h, w = prev.shape[0] // 2, prev.shape[1] // 2
        blocks = prev[:2 * h, :2 * w].reshape(h, 2, w, 2)
        pyramid.append(blocks.mean(axis=(1, 3)))
    return pyramid


def _window_offsets(radius):
    span = np.arange(-radius, radius + 1, dtype=np.float64)
    rows, cols = np.meshgrid(span, span, indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def _sample(image, coords):
    """Bilinear samples of image at coords (..., 2), edges replicated"""
    flat = coords.reshape(-1, 2)
    values = map_coordinates(image, [flat[:, 0], flat[:, 1]], order=1, mode="nearest")
    return values.reshape(coords.shape[:-1])


def _lk_batch(prev, nxt, grads, points, guesses, params):
    """
    Iterative Lucas-Kanade on one pyramid level for many points at once.

    Every iterate is scored by the window SSD and the lowest one is returned,
    which is never worse than the incoming guess. Updates that run past the
    window radius are abandoned.

    Returns:
        tuple: (displacements (n, 2), singular mask (n,), window SSD (n,))
    """
    offsets = _window_offsets(params.window_radius)
    area = len(offsets)
    coords = points[:, None, :] + offsets[None, :, :]

    i_prev = _sample(prev, coords)
    i_row = _sample(grads[0], coords)
    i_col = _sample(grads[1], coords)

    g_rr = np.sum(i_row * i_row, axis=1)
    g_rc = np.sum(i_row * i_col, axis=1)
    g_cc = np.sum(i_col * i_col, axis=1)
    half_trace = 0.5 * (g_rr + g_cc)
    spread = np.sqrt((0.5 * (g_rr - g_cc)) ** 2 + g_rc ** 2)
    min_eig = half_trace - spread
    max_eig = half_trace + spread
    singular = (min_eig < SINGULAR_EIGEN_FLOOR * area) | (min_eig < CONDITION_RATIO * max_eig)
    det = np.where(singular, 1.0, g_rr * g_cc - g_rc ** 2)

    nu = np.zeros_like(guesses)
    best_nu = np.zeros_like(guesses)
    best_ssd = np.full(len(points), np.inf)

    def score(idx):
        moved = coords[idx] + (guesses[idx] + nu[idx])[:, None, :]
        diff = i_prev[idx] - _sample(nxt, moved)
        ssd = np.sum(diff * diff, axis=1)
        better = ssd < best_ssd[idx]
        best_ssd[idx[better]] = ssd[better]
        best_nu[idx[better]] = nu[idx[better]]
        return diff

    active = ~singular
    diff = score(np.arange(len(points)))[active]
    for _ in range(params.max_iterations):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        b_r = np.sum(diff * i_row[idx], axis=1)
        b_c = np.sum(diff * i_col[idx], axis=1)
        eta_r = (g_cc[idx] * b_r - g_rc[idx] * b_c) / det[idx]
        eta_c = (g_rr[idx] * b_c - g_rc[idx] * b_r) / det[idx]
        nu[idx, 0] += eta_r
        nu[idx, 1] += eta_c
        converged = np.hypot(eta_r, eta_c) < params.epsilon
        runaway = np.hypot(nu[idx, 0], nu[idx, 1]) > params.window_radius
        nu[idx[runaway]] = best_nu[idx[runaway]]
        scored = score(idx[~runaway])
        still = ~(converged | runaway)
        diff = scored[still[~runaway]]
        active[idx[~still]] = False

    return guesses + best_nu, singular, best_ssd


def lk_refine(prev, nxt, point, guess, params=None, grads=None):
    """
    Refine a displacement guess for one point with iterative Lucas-Kanade.

    Args:
        prev (np.ndarray): Image at time t
        nxt (np.ndarray): Image at time t+1
        point (sequence): (row, col) in prev
        guess (sequence): Initial displacement (d_row, d_col)
        params (FlowParams, optional): Window radius, iterations, epsilon
        grads (tuple, optional): Precomputed (d/drow, d/dcol) of prev

    Returns:
        np.ndarray: Displacement (d_row, d_col); the guess itself when the
        window's structure matrix is near-singular
    """
    params = params or FlowParams()
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if grads is None:
        grads = np.gradient(prev)
    points = np.asarray(point, dtype=np.float64).reshape(1, 2)
    guesses = np.asarray(guess, dtype=np.float64).reshape(1, 2)
    result, _, _ = _lk_batch(prev, nxt, grads, points, guesses, params)
    return result[0]


def _level_coords(points, level):
    """Map level-0 pixel coordinates onto a box-averaged pyramid level"""
    scale = 2.0 ** level
    return (points + 0.5) / scale - 0.5


def _pyramidal_flow(pyr_prev, pyr_next, grads, points, params):
    """
    Coarse-to-fine flow. Below the coarsest level each point is also refined
    from a zero guess; the start with the lower window SSD is kept.
    """
    guesses = np.zeros_like(points)
    singular_any = np.zeros(len(points), dtype=bool)
    coarsest = len(pyr_prev) - 1
    for level in range(coarsest, -1, -1):
        level_points = _level_coords(points, level)
        args = (pyr_prev[level], pyr_next[level], grads[level], level_points)
        disp, singular, ssd = _lk_batch(*args, guesses, params)
        if level < coarsest:
            local, _, local_ssd = _lk_batch(*args, np.zeros_like(guesses), params)
            closer = local_ssd < ssd
            disp[closer] = local[closer]
        singular_any |= singular
        guesses = 2.0 * disp if level > 0 else disp
    return guesses, singular_any


def _sample_dense_flow(flow, points):
    flow = np.asarray(flow, dtype=np.float64)
    d_row = _sample(flow[..., 0], points[:, None, :])[:, 0]
    d_col = _sample(flow[..., 1], points[:, None, :])[:, 0]
    return np.stack([d_row, d_col], axis=1)


def track_anchors(video, anchors, params=None, flows=None):
    """
    Move each anchor through the video by optical flow. Tracking of an
    anchor stops at the last frame where it is still on screen.

    Args:
        video (VideoTensor): Input video
        anchors (sequence): (row, col) anchor positions in frame 0
        params (FlowParams, optional): Tracker settings
        flows (np.ndarray, optional): Dense flow of shape (T-1, H, W, 2) in
            (d_row, d_col); when given it is sampled instead of running LK

    Returns:
        list: One AnchorTrack per anchor, ids in input order
    """
    params = params or FlowParams()
    params.validate()
    T, H, W = video.frames, video.height, video.width
    if T < 2:
        raise ValidationError("Tracking needs at least 2 frames")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    outside = ((anchors[:, 0] < 0) | (anchors[:, 0] > H - 1) |
               (anchors[:, 1] < 0) | (anchors[:, 1] > W - 1))
    if outside.any():
        raise ValidationError(f"{int(outside.sum())} anchors lie outside the first frame")
    if flows is not None:
        flows = np.asarray(flows)
        if flows.shape != (T - 1, H, W, 2):
            raise DimensionMismatchError(f"Dense flow must have shape {(T - 1, H, W, 2)}, got {flows.shape}")

    n = len(anchors)
    history = [[p] for p in anchors]
    alive = np.ones(n, dtype=bool)
    current = anchors.copy()

    pyramids = grads = None
    if flows is None:
        gray = video.grayscale()
        levels = min(params.levels, 1 + int(np.floor(np.log2(min(H, W)))))
        pyramids = [build_pyramid(frame, levels) for frame in gray]
        grads = [[np.gradient(img) for img in pyr] for pyr in pyramids]

    for t in range(T - 1):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        if flows is not None:
            disp = _sample_dense_flow(flows[t], current[idx])
        else:
            disp, singular = _pyramidal_flow(pyramids[t], pyramids[t + 1], grads[t], current[idx], params)
            if singular.any():
                logger.debug(f"Frame {t}: {int(singular.sum())} textureless windows kept their coarse guess")
        moved = current[idx] + disp
        on_screen = ((moved[:, 0] >= 0) & (moved[:, 0] <= H - 1) &
                     (moved[:, 1] >= 0) & (moved[:, 1] <= W - 1))
        for k, i in enumerate(idx):
            if on_screen[k]:
                history[i].append(moved[k])
                current[i] = moved[k]
            else:
                alive[i] = False

    tracks = [AnchorTrack(i, np.array(history[i])) for i in range(n)]
    lost = sum(1 for tr in tracks if tr.alive_until < T)
    logger.info(f"Tracked {n} anchors over {T} frames ({lost} left the screen)")
    return tracks
