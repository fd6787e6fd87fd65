#!/usr/bin/env python3
"""
Rendering module for the AOSA explainability engine.
Blends saliency maps over video luminance and writes PPM frames and
matplotlib frame panels.
"""

import io
import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib import colormaps  # noqa: E402
import numpy as np  # noqa: E402

from core.errors import DimensionMismatchError, ValidationError  # noqa: E402
from core.tensor_io import atomic_write_bytes  # noqa: E402
from utils.constants import OVERLAY_ALPHA, OVERLAY_COLORMAP, PANEL_FRAMES  # noqa: E402

logger = logging.getLogger(__name__)


def normalize_map(values):
    """
    Scale a map to [0, 1] by its maximum over the whole clip; negative
    values count as zero.

    Args:
        values (np.ndarray): T x H x W map

    Returns:
        np.ndarray: Normalized map, all zeros when the maximum is not positive
    """
    positive = np.clip(np.asarray(values, dtype=np.float64), 0.0, None)
    peak = positive.max() if positive.size else 0.0
    if peak <= 0:
        return np.zeros_like(positive)
    return positive / peak


def overlay(video, values, alpha=OVERLAY_ALPHA, colormap=OVERLAY_COLORMAP):
    """
    Blend the colormapped map over the grayscale video. Each pixel mixes
    towards its color by alpha times its normalized saliency.

    Args:
        video (VideoTensor): Video with values in [0, 1]
        values (np.ndarray): T x H x W saliency
        alpha (float): Blend weight at maximal saliency
        colormap (str): Matplotlib colormap name

    Returns:
        np.ndarray: uint8 frames of shape (T, H, W, 3)
    """
    values = getattr(values, "values", values)
    if tuple(np.shape(values)) != video.dims[:3]:
        raise DimensionMismatchError(f"Map {np.shape(values)} does not match video {video.dims[:3]}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    gray = np.clip(video.grayscale(), 0.0, 1.0)[..., None]
    weight = normalize_map(values)
    color = colormaps[colormap](weight)[..., :3]
    mix = alpha * weight[..., None]
    blended = (1.0 - mix) * gray + mix * color
    return np.round(blended * 255.0).astype(np.uint8)


def encode_ppm(frame):
    """Binary PPM (P6) bytes of an H x W x 3 uint8 frame"""
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    height, width = frame.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + frame.tobytes()


def write_overlays(frames, out_dir, prefix="frame"):
    """
    Write one PPM per frame as <prefix>_NNNN.ppm (1-based).

    Returns:
        list: Written paths
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        path = os.path.join(out_dir, f"{prefix}_{t + 1:04d}.ppm")
        atomic_write_bytes(path, encode_ppm(frame))
        paths.append(path)
    logger.info(f"Wrote {len(paths)} overlay frames to {out_dir}")
    return paths


def render_panel(video, values, path, frames=None, alpha=OVERLAY_ALPHA, title=None):
    """
    Save a PNG panel: selected frames on top, their overlays below.

    Args:
        video (VideoTensor): Video with values in [0, 1]
        values (np.ndarray): T x H x W saliency
        path (str): Output PNG path
        frames (list, optional): 1-based frame numbers, default PANEL_FRAMES
        title (str, optional): Figure title
    """
    frames = [f for f in (frames or PANEL_FRAMES) if 1 <= f <= video.frames]
    if not frames:
        raise ValidationError(f"No panel frame within 1..{video.frames}")
    blended = overlay(video, values, alpha)
    gray = np.clip(video.grayscale(), 0.0, 1.0)

    fig, axes = plt.subplots(2, len(frames), figsize=(2.2 * len(frames), 4.6), squeeze=False)
    for col, number in enumerate(frames):
        axes[0, col].imshow(gray[number - 1], cmap="gray", vmin=0.0, vmax=1.0)
        axes[0, col].set_title(f"t={number}", fontsize=10)
        axes[1, col].imshow(blended[number - 1])
        for ax in axes[:, col]:
            ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=12)
    fig.tight_layout()
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=100)
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Saved panel to {path}")
