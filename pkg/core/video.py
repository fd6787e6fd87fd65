#!/usr/bin/env python3
"""
Video module for the AOSA explainability engine.
Holds the canonical video tensor, ground-truth boxes, normalization and the
synthetic moving-shape generator used for desk-scale evaluation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from core.errors import ValidationError
from utils.constants import LUMA_WEIGHTS, NUM_DIRECTIONS

logger = logging.getLogger(__name__)

Box = Tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class VideoTensor:
    """Dense T x H x W x C video, T-major canonical layout. Immutable."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if data.ndim != 4:
            raise ValidationError(f"Video must have rank 4 (T, H, W, C), got shape {data.shape}")
        frames, height, width, channels = data.shape
        if frames < 2:
            raise ValidationError(f"Video needs at least 2 frames, got {frames}")
        if height < 1 or width < 1:
            raise ValidationError(f"Video frames must be non-empty, got {height}x{width}")
        if channels not in (1, 3):
            raise ValidationError(f"Video must have 1 or 3 channels, got {channels}")
        data = np.ascontiguousarray(data)
        if data is self.data:
            data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def frames(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def channels(self):
        return self.data.shape[3]

    @property
    def dims(self):
        """(T, H, W, C)"""
        return tuple(self.data.shape)

    def grayscale(self):
        """
        Luminance frames used by the flow tracker.

        Returns:
            np.ndarray: float64 array of shape (T, H, W)
        """
        data = self.data.astype(np.float64)
        if self.channels == 1:
            return data[..., 0]
        return np.tensordot(data, np.asarray(LUMA_WEIGHTS), axes=([3], [0]))


@dataclass(frozen=True)
class GroundTruthBoxes:
    """Per-frame axis-aligned boxes (top, left, height, width); None where absent."""
    boxes: Tuple[Optional[Box], ...]
    height: int
    width: int

    def __post_init__(self):
        boxes = tuple(None if b is None else tuple(int(v) for v in b) for b in self.boxes)
        for t, box in enumerate(boxes):
            if box is None:
                continue
            top, left, h, w = box
            if h < 1 or w < 1 or top < 0 or left < 0 or top + h > self.height or left + w > self.width:
                raise ValidationError(f"Box {box} at frame {t} lies outside a {self.height}x{self.width} frame")
        object.__setattr__(self, "boxes", boxes)

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, t):
        return self.boxes[t]

    def annotated_frames(self):
        """Indices of frames that carry a box"""
        return [t for t, box in enumerate(self.boxes) if box is not None]

    def to_list(self):
        return [None if b is None else list(b) for b in self.boxes]

    @classmethod
    def from_list(cls, boxes, height, width):
        return cls(tuple(None if b is None else tuple(b) for b in boxes), height, width)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Description of one synthetic clip: a single shape translating at a
    constant velocity over a background.

    Positions are (top, left) of the shape's bounding square at frame 0;
    motion is (d_row, d_col) pixels per frame.
    """
    frames: int = 16
    height: int = 112
    width: int = 112
    shape: str = "rectangle"
    size: Tuple[int, int] = (16, 16)
    start: Tuple[float, float] = (48.0, 8.0)
    motion: Tuple[float, float] = (0.0, 2.0)
    texture: str = "noise"
    background: str = "static"
    background_drift: Tuple[int, int] = (0, 1)
    channels: int = 3

    def validate(self):
        if self.frames < 2 or self.height < 1 or self.width < 1:
            raise ValidationError(f"Invalid scene size {self.frames}x{self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {self.channels}")
        if self.shape not in ("rectangle", "disc"):
            raise ValidationError(f"Unknown shape kind '{self.shape}'")
        if self.texture not in ("flat", "noise"):
            raise ValidationError(f"Unknown texture mode '{self.texture}'")
        if self.background not in ("static", "drifting"):
            raise ValidationError(f"Unknown background mode '{self.background}'")
        if self.size[0] < 1 or self.size[1] < 1:
            raise ValidationError(f"Shape size must be positive, got {self.size}")
        if self.motion[0] == 0 and self.motion[1] == 0:
            raise ValidationError("Motion must be non-zero to define a direction class")
        if not any(self._frame_box(t) is not None for t in range(self.frames)):
            raise ValidationError("Shape never appears on screen")

    def label(self):
        """
        Direction class of the motion vector: 0 = right, counterclockwise in
        45 degree steps.

        Returns:
            int: class id in [0, 8)
        """
        angle = math.atan2(-self.motion[0], self.motion[1])
        return int(round(angle / (math.pi / 4))) % NUM_DIRECTIONS

    def origin(self, t):
        """Integer (top, left) of the shape square at frame t"""
        top = self.start[0] + self.motion[0] * t
        left = self.start[1] + self.motion[1] * t
        return int(math.floor(top + 0.5)), int(math.floor(left + 0.5))

    def _frame_box(self, t):
        top, left = self.origin(t)
        h, w = self.size
        r0, r1 = max(top, 0), min(top + h, self.height)
        c0, c1 = max(left, 0), min(left + w, self.width)
        if r0 >= r1 or c0 >= c1:
            return None
        return r0, c0, r1 - r0, c1 - c0


def _shape_footprint(spec):
    """Boolean footprint of the shape within its size[0] x size[1] square"""
    h, w = spec.size
    if spec.shape == "rectangle":
        return np.ones((h, w), dtype=bool)
    rows, cols = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = min(h, w) / 2.0
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2


def _smooth_noise(rng, shape, sigma):
    noise = rng.random(shape)
    smooth = gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="reflect")
    lo, hi = smooth.min(), smooth.max()
    if hi - lo < 1e-12:
        return np.zeros(shape)
    return (smooth - lo) / (hi - lo)


def generate_synthetic(spec, seed):
    """
    Render a synthetic clip with its ground-truth boxes.

    Args:
        spec (SyntheticSpec): Scene description
        seed (int): Random seed for colors and textures

    Returns:
        tuple: (VideoTensor, GroundTruthBoxes, class id)
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    T, H, W, C = spec.frames, spec.height, spec.width, spec.channels

    # Background canvas large enough to drift across the clip
    drift = np.asarray(spec.background_drift if spec.background == "drifting" else (0, 0), dtype=int)
    pad_r = abs(int(drift[0])) * (T - 1)
    pad_c = abs(int(drift[1])) * (T - 1)
    canvas = 0.15 + 0.25 * _smooth_noise(rng, (H + pad_r, W + pad_c, C), sigma=2.0)

    h, w = spec.size
    footprint = _shape_footprint(spec)
    if spec.texture == "flat":
        color = rng.uniform(0.7, 1.0, size=C)
        patch = np.broadcast_to(color, (h, w, C)).copy()
    else:
        patch = 0.6 + 0.4 * _smooth_noise(rng, (h, w, C), sigma=1.5)

    video = np.empty((T, H, W, C), dtype=np.float32)
    boxes = []
    for t in range(T):
        r_off = pad_r - int(drift[0]) * t if drift[0] > 0 else -int(drift[0]) * t
        c_off = pad_c - int(drift[1]) * t if drift[1] > 0 else -int(drift[1]) * t
        frame = canvas[r_off:r_off + H, c_off:c_off + W].copy()

        top, left = spec.origin(t)
        r0, r1 = max(top, 0), min(top + h, H)
        c0, c1 = max(left, 0), min(left + w, W)
        box = None
        if r0 < r1 and c0 < c1:
            fp = footprint[r0 - top:r1 - top, c0 - left:c1 - left]
            region = frame[r0:r1, c0:c1]
            region[fp] = patch[r0 - top:r1 - top, c0 - left:c1 - left][fp]
            if fp.any():
                rows = np.flatnonzero(fp.any(axis=1))
                cols = np.flatnonzero(fp.any(axis=0))
                box = (r0 + int(rows[0]), c0 + int(cols[0]),
                       int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))
        boxes.append(box)
        video[t] = frame

    return VideoTensor(video), GroundTruthBoxes(tuple(boxes), H, W), spec.label()


def direction_vector(label, speed):
    """
    Integer (d_row, d_col) motion for a direction class.

    Args:
        label (int): Direction class
        speed (int): Pixels per frame along each moving axis

    Returns:
        tuple: (d_row, d_col)
    """
    angle = label * math.pi / 4
    return int(round(-math.sin(angle))) * speed, int(round(math.cos(angle))) * speed


def random_spec(rng, label, frames, height, width, size=None):
    """
    Draw a spec of the given direction class whose shape stays fully on
    screen whenever the frame is large enough to allow it.

    Args:
        rng (np.random.Generator): Random generator
        label (int): Direction class
        frames, height, width (int): Scene size
        size (int, optional): Shape side; defaults to a quarter of the frame

    Returns:
        SyntheticSpec: The drawn spec
    """
    side = size or max(4, min(height, width) // 4)
    room = min(height, width) - side
    max_speed = max(1, room // max(frames - 1, 1))
    speed = int(rng.integers(1, min(max_speed, 3) + 1))
    d_row, d_col = direction_vector(label, speed)
    travel_r, travel_c = d_row * (frames - 1), d_col * (frames - 1)

    def pick(travel, extent):
        lo = max(0, -travel)
        hi = min(extent - side, extent - side - travel)
        if hi < lo:
            return float(max(0, (extent - side - travel) // 2))
        return float(rng.integers(lo, hi + 1))

    return SyntheticSpec(
        frames=frames, height=height, width=width,
        shape=str(rng.choice(["rectangle", "disc"])),
        size=(side, side),
        start=(pick(travel_r, height), pick(travel_c, width)),
        motion=(float(d_row), float(d_col)),
        texture=str(rng.choice(["flat", "noise"])),
        background="static",
    )


def generate_dataset(per_class, frames, height, width, seed, size=None):
    """
    Generate a balanced synthetic dataset over the 8 direction classes.

    Args:
        per_class (int): Videos per class
        frames, height, width (int): Scene size
        seed (int): Random seed
        size (int, optional): Shape side

    Returns:
        list: (VideoTensor, GroundTruthBoxes, class) tuples ordered by index
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(per_class * NUM_DIRECTIONS):
        label = i % NUM_DIRECTIONS
        spec = random_spec(rng, label, frames, height, width, size)
        samples.append(generate_synthetic(spec, int(rng.integers(0, 2 ** 31 - 1))))
    logger.info(f"Generated {len(samples)} synthetic videos of size {frames}x{height}x{width}")
    return samples


def _per_channel(values, channels, name):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 1:
        arr = np.repeat(arr, channels)
    if arr.size != channels:
        raise ValidationError(f"{name} needs {channels} values, got {arr.size}")
    return arr


def normalize(video, mean, std):
    """
    Per-channel affine normalization: (x - mean) / std.

    Args:
        video (VideoTensor): Input video
        mean (float or sequence): Per-channel mean
        std (float or sequence): Per-channel standard deviation, all > 0

    Returns:
        VideoTensor: Normalized video, same dtype as the input
    """
    mean = _per_channel(mean, video.channels, "mean")
    std = _per_channel(std, video.channels, "std")
    if np.any(std <= 0):
        raise ValidationError(f"std must be positive per channel, got {std.tolist()}")
    out = (video.data.astype(np.float64) - mean) / std
    return VideoTensor(out.astype(video.data.dtype))


def denormalize(video, mean, std):
    """Inverse of normalize"""
    mean = _per_channel(mean, video.channels, "mean")
    std = _per_channel(std, video.channels, "std")
    if np.any(std <= 0):
        raise ValidationError(f"std must be positive per channel, got {std.tolist()}")
    out = video.data.astype(np.float64) * std + mean
    return VideoTensor(out.astype(video.data.dtype))
