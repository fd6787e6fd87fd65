#!/usr/bin/env python3
"""
Synthetic Dataset Generator for the AOSA Explainability Engine

This script generates moving-shape videos for the eight motion-direction
classes and writes them as tensor files with an index of labels and boxes.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Tuple

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from core.data_loader import write_dataset  # noqa: E402
from core.video import generate_dataset  # noqa: E402
from utils.constants import DIRECTION_NAMES  # noqa: E402

logger = logging.getLogger(__name__)

# Constants
DEFAULT_FRAMES = 16
DEFAULT_SIZE = 32


def class_histogram(samples: List[Tuple[Any, Any, int]]) -> Dict[str, int]:
    """
    Count videos per direction class

    Args:
        samples: (video, boxes, label) tuples

    Returns:
        Mapping of direction name to count
    """
    counts = {name: 0 for name in DIRECTION_NAMES}
    for _, _, label in samples:
        counts[DIRECTION_NAMES[label]] += 1
    return counts


def generate(output: str, per_class: int, frames: int, height: int, width: int,
             seed: int, size: int = None) -> str:
    """
    Generate a dataset directory

    Args:
        output: Output directory
        per_class: Videos per direction class
        frames, height, width: Scene size
        seed: Random seed
        size: Shape side in pixels (default: scaled to the frame)

    Returns:
        Path of the written index
    """
    samples = generate_dataset(per_class, frames, height, width, seed, size)
    extra = {
        "frames": frames,
        "height": height,
        "width": width,
        "seed": seed,
        "classes": DIRECTION_NAMES,
    }
    return write_dataset(output, samples, extra)


def main():
    """Main function to parse arguments and generate the dataset"""
    parser = argparse.ArgumentParser(description='Generate synthetic moving-shape videos')
    parser.add_argument('--per_class', type=int, default=8, help='Videos per direction class')
    parser.add_argument('--frames', type=int, default=DEFAULT_FRAMES, help='Frames per video')
    parser.add_argument('--height', type=int, default=DEFAULT_SIZE, help='Frame height in pixels')
    parser.add_argument('--width', type=int, default=DEFAULT_SIZE, help='Frame width in pixels')
    parser.add_argument('--shape_size', type=int, help='Shape side in pixels')
    parser.add_argument('--output', type=str, default='dataset', help='Output directory')
    parser.add_argument('--seed', type=int, default=0, help='Random seed for reproducibility')

    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    index = generate(args.output, args.per_class, args.frames, args.height, args.width,
                     args.seed, args.shape_size)
    print(f"Dataset saved to {args.output} (index: {index})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
