#!/usr/bin/env python3
"""
Tensor file I/O for the AOSA explainability engine.

Layout (little-endian):
    magic "AOST" | version u8 | rank u8 | dtype u8 | reserved u8 |
    dims u32 x rank | zero padding up to 32 bytes | float32 payload
"""

import logging
import os
import struct
import tempfile

import numpy as np

from core.errors import TensorFormatError
from utils.constants import (DTYPE_FLOAT32, TENSOR_HEADER_SIZE, TENSOR_MAGIC,
                             TENSOR_MAX_RANK, TENSOR_VERSION)

logger = logging.getLogger(__name__)

_U32_MAX = 2 ** 32 - 1


def _as_array(tensor):
    """Accept VideoTensor, SaliencyMap or anything array-like"""
    if isinstance(tensor, np.ndarray):
        return tensor
    for attr in ("data", "values"):
        if hasattr(tensor, attr):
            return np.asarray(getattr(tensor, attr))
    return np.asarray(tensor)


def encode_header(shape):
    """
    Build the 32-byte header for a float32 tensor of the given shape.

    Args:
        shape (tuple): Tensor dims

    Returns:
        bytes: Header bytes
    """
    rank = len(shape)
    if rank < 1 or rank > TENSOR_MAX_RANK:
        raise TensorFormatError(f"Unsupported rank {rank}")
    for dim in shape:
        if dim < 0 or dim > _U32_MAX:
            raise TensorFormatError(f"Dimension {dim} does not fit the header")
    header = TENSOR_MAGIC + struct.pack("<BBBB", TENSOR_VERSION, rank, DTYPE_FLOAT32, 0)
    header += struct.pack(f"<{rank}I", *shape)
    return header.ljust(TENSOR_HEADER_SIZE, b"\0")


def decode_header(header):
    """
    Parse a 32-byte header.

    Args:
        header (bytes): Exactly 32 header bytes

    Returns:
        tuple: Tensor dims
    """
    if len(header) < TENSOR_HEADER_SIZE:
        raise TensorFormatError(f"Truncated header: {len(header)} bytes")
    if header[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"Bad magic {header[:4]!r}")
    version, rank, dtype, _ = struct.unpack("<BBBB", header[4:8])
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"Unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"Unsupported element type {dtype}")
    if rank < 1 or rank > TENSOR_MAX_RANK:
        raise TensorFormatError(f"Unsupported rank {rank}")
    shape = struct.unpack(f"<{rank}I", header[8:8 + 4 * rank])
    count = 1
    for dim in shape:
        count *= dim
    if count * 4 > 2 ** 62:
        raise TensorFormatError(f"Dimensions {shape} overflow the payload size")
    return tuple(int(d) for d in shape)


def payload_size(shape):
    """Payload size in bytes"""
    return int(np.prod(shape, dtype=np.int64)) * 4


def encode_tensor(tensor):
    """
    Serialize a tensor to bytes.

    Args:
        tensor: VideoTensor, SaliencyMap or array-like

    Returns:
        bytes: Header followed by the float32 payload
    """
    data = _as_array(tensor)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return encode_header(data.shape) + payload


def decode_tensor(buffer):
    """
    Parse bytes produced by encode_tensor.

    Args:
        buffer (bytes): Serialized tensor

    Returns:
        np.ndarray: float32 array
    """
    shape = decode_header(buffer[:TENSOR_HEADER_SIZE])
    expected = payload_size(shape)
    payload = buffer[TENSOR_HEADER_SIZE:]
    if len(payload) != expected:
        raise TensorFormatError(f"Payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def atomic_write_bytes(path, data):
    """
    Write bytes through a temporary file and rename it into place.

    Args:
        path (str): Destination path
        data (bytes): File contents
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, temp_file = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(temp_file, path)
    except BaseException:
        if os.path.exists(temp_file):
            os.remove(temp_file)
        raise


def save_tensor(tensor, path):
    """
    Save a tensor in the AOST format.

    Args:
        tensor: VideoTensor, SaliencyMap or array-like
        path (str): Output path
    """
    atomic_write_bytes(path, encode_tensor(tensor))
    logger.debug(f"Saved tensor of shape {_as_array(tensor).shape} to {path}")


def load_tensor(path):
    """
    Load a tensor saved with save_tensor.

    Args:
        path (str): Input path

    Returns:
        np.ndarray: float32 array
    """
    with open(path, "rb") as f:
        buffer = f.read()
    try:
        return decode_tensor(buffer)
    except TensorFormatError as e:
        raise TensorFormatError(f"{path}: {e}") from None
