#!/usr/bin/env python3
"""
Constants module for the AOSA explainability engine.
Contains application-wide constants and default settings.
"""

import os

# Application information
APP_NAME = "AOSA Video Explainer"
APP_VERSION = "1.0.0"

# Environment variable pointing to a default configuration file
CONFIG_ENV_VAR = "AOSA_CONFIG"

# Tensor file format
TENSOR_MAGIC = b"AOST"
TENSOR_VERSION = 1
TENSOR_HEADER_SIZE = 32
TENSOR_MAX_RANK = 6
DTYPE_FLOAT32 = 1

# Luminance weights for grayscale conversion (R, G, B)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Synthetic motion classes: 8 directions, 45 degrees apart, counterclockwise
# starting from "right". Vectors are (d_row, d_col); rows grow downwards.
DIRECTION_NAMES = [
    "right", "up_right", "up", "up_left",
    "left", "down_left", "down", "down_right",
]
NUM_DIRECTIONS = len(DIRECTION_NAMES)

# Conditional sampling window (pixels) around each anchor
FILL_WINDOW = 36

# Score modes
SCORE_PROBABILITY = "probability"
SCORE_LOGIT = "logit"
SCORE_MODES = (SCORE_PROBABILITY, SCORE_LOGIT)

# Evaluation methods
METHODS = ["aosa", "aosa_sgl", "aosa_approx", "aosa_sgl_approx", "cuboid", "random"]

# Default configuration. Every key may be overridden by a config file or a flag.
DEFAULT_CONFIG = {
    "flow": {
        "levels": 3,
        "window_radius": 7,
        "max_iterations": 10,
        "epsilon": 0.01,
    },
    "masks": {
        "s": 8,
        "occ_h": 16,
        "occ_w": 16,
        "K": 5,
    },
    "saliency": {
        "method": "exact",
        "fill": "const",
        "fill_value": 0.0,
        "score": "prob",
        "class": "argmax",
        "normalize_coverage": False,
        "mc_samples": 8,
        "adjust": True,
        "seed": 0,
        "norm_mean": [0.5, 0.5, 0.5],
        "norm_std": [0.25, 0.25, 0.25],
    },
    "cuboid": {
        "occ_t": 8,
        "stride_t": 2,
        "stride_s": 8,
    },
    "metrics": {
        "steps": 28,
        "radius": 7.0,
        "baseline": 0.0,
    },
    "train": {
        "per_class": 64,
        "frames": 16,
        "height": 32,
        "width": 32,
        "epochs": 30,
        "batch_size": 16,
        "learning_rate": 0.05,
    },
    "eval": {
        "videos": 20,
        "workers": 1,
        "methods": "aosa,cuboid,random",
    },
}

# Frames (1-based) shown in a rendered panel
PANEL_FRAMES = [1, 5, 9, 13, 16]

# Colormap used for saliency overlays
OVERLAY_COLORMAP = "jet"
OVERLAY_ALPHA = 0.5


def get_default_config_path():
    """
    Get the path of the bundled default configuration file.

    Returns:
        str: Path to Configuration/default_config.json
    """
    base_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return os.path.join(base_dir, "Configuration", "default_config.json")
