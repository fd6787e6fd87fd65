#!/usr/bin/env python3
"""
Data loading module for the AOSA explainability engine.
Handles configuration files, synthetic dataset directories and the
metadata sidecars written next to saliency maps.
"""

import json
import logging
import os

from core.errors import ConfigError, TensorFormatError
from core.tensor_io import atomic_write_bytes, load_tensor, save_tensor
from core.video import GroundTruthBoxes, VideoTensor
from utils.constants import CONFIG_ENV_VAR, DEFAULT_CONFIG

logger = logging.getLogger(__name__)

DATASET_INDEX = "index.json"
SIDECAR_SUFFIX = ".meta"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def flatten_config(config):
    """
    Flatten a sectioned configuration into a single key -> value dict.

    Args:
        config (dict): Nested {section: {key: value}} or already flat

    Returns:
        dict: Flat configuration
    """
    flat = {}
    for key, value in config.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def default_config():
    """Flat copy of DEFAULT_CONFIG"""
    return {k: list(v) if isinstance(v, list) else v for k, v in flatten_config(DEFAULT_CONFIG).items()}


def _coerce(key, raw, default):
    """Convert a key=value string to the type of the default"""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Invalid value for '{key}': {raw!r}") from None
    return raw


def _check_keys(config, source):
    known = default_config()
    unknown = sorted(set(config) - set(known))
    if unknown:
        raise ConfigError(f"Unknown configuration keys in {source}: {', '.join(unknown)}")


def parse_key_value(text, source="<string>"):
    """
    Parse key=value lines; blank lines and lines starting with '#' are skipped.

    Args:
        text (str): File contents
        source (str): Name used in error messages

    Returns:
        dict: Typed flat configuration
    """
    known = default_config()
    config = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{number}: unknown configuration key '{key}'")
        config[key] = _coerce(key, value, known[key])
    return config


def load_config(file_path):
    """
    Load a configuration file in JSON or key=value format.

    Args:
        file_path (str): Path to the configuration file

    Returns:
        dict: Flat configuration overrides
    """
    try:
        with open(file_path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {file_path}: {e}") from e

    if text.lstrip().startswith("{"):
        try:
            config = flatten_config(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {file_path}: {e}") from e
        _check_keys(config, file_path)
    else:
        config = parse_key_value(text, file_path)
    logger.info(f"Loaded configuration from {file_path}")
    return config


def resolve_config(file_path=None, environ=None):
    """
    Defaults overridden by a configuration file: the given path, else the
    file named by the AOSA_CONFIG environment variable.

    Returns:
        dict: Flat configuration
    """
    environ = os.environ if environ is None else environ
    config = default_config()
    path = file_path or environ.get(CONFIG_ENV_VAR)
    if path:
        config.update(load_config(path))
    return config


def save_config(config, file_path):
    """
    Save a flat configuration as sectioned JSON.

    Args:
        config (dict): Flat configuration
        file_path (str): Path to save the configuration file
    """
    _check_keys(config, "configuration")
    nested = {}
    for section, keys in DEFAULT_CONFIG.items():
        nested[section] = {k: config.get(k, v) for k, v in keys.items()}
    atomic_write_bytes(file_path, (json.dumps(nested, indent=4) + "\n").encode("utf-8"))
    logger.info(f"Saved configuration to {file_path}")


def sidecar_path(map_path):
    return map_path + SIDECAR_SUFFIX


def format_sidecar(metadata):
    """Render metadata as key=value lines in insertion order"""
    return "".join(f"{key}={value}\n" for key, value in metadata.items())


def write_sidecar(map_path, metadata):
    """
    Write the key=value metadata sidecar of a saliency map.

    Returns:
        str: Sidecar path
    """
    path = sidecar_path(map_path)
    atomic_write_bytes(path, format_sidecar(metadata).encode("utf-8"))
    return path


def read_sidecar(path):
    """
    Read a key=value sidecar. Values stay strings.

    Returns:
        dict: Metadata
    """
    with open(path, "r") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    return dict(line.split("=", 1) for line in lines)


def write_dataset(directory, samples, extra=None):
    """
    Write samples as NNNN.aost video files plus an index.json of labels and
    per-frame boxes.

    Args:
        directory (str): Output directory, created when missing
        samples (list): (VideoTensor, GroundTruthBoxes, label) tuples
        extra (dict, optional): Additional index fields

    Returns:
        str: Index path
    """
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (video, boxes, label) in enumerate(samples):
        name = f"{i:04d}.aost"
        save_tensor(video, os.path.join(directory, name))
        entries.append({"file": name, "label": int(label), "boxes": boxes.to_list()})
    index = dict(extra or {})
    index["videos"] = entries
    path = os.path.join(directory, DATASET_INDEX)
    atomic_write_bytes(path, (json.dumps(index, indent=2) + "\n").encode("utf-8"))
    logger.info(f"Wrote {len(entries)} videos to {directory}")
    return path


def load_dataset(directory):
    """
    Load a directory written by write_dataset.

    Args:
        directory (str): Dataset directory

    Returns:
        list: (VideoTensor, GroundTruthBoxes, label) tuples in index order
    """
    path = os.path.join(directory, DATASET_INDEX)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"No {DATASET_INDEX} in {directory}")
    with open(path, "r") as f:
        index = json.load(f)
    samples = []
    for entry in index.get("videos", []):
        data = load_tensor(os.path.join(directory, entry["file"]))
        if data.ndim != 4:
            raise TensorFormatError(f"{entry['file']}: expected a rank-4 video, got rank {data.ndim}")
        video = VideoTensor(data)
        boxes = GroundTruthBoxes.from_list(entry["boxes"], video.height, video.width)
        samples.append((video, boxes, int(entry["label"])))
    logger.info(f"Loaded {len(samples)} videos from {directory}")
    return samples
