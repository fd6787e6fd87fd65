#!/usr/bin/env python3
"""
Stub external model speaking the runner wire protocol.

    python -m core.stub_server echo --scores 0.2,0.8
    python -m core.stub_server linear --weights w.aost [--bias 0.5]
    python -m core.stub_server malformed
"""

import argparse
import struct
import sys

import numpy as np

from core.runner import OP_FORWARD, OP_GRADIENT, STATUS_OK
from core.tensor_io import decode_header, encode_tensor, load_tensor, payload_size
from utils.constants import TENSOR_HEADER_SIZE


def _read_exact(stream, n):
    data = stream.read(n)
    if len(data) < n:
        return None
    return data


def _read_request(stream):
    op = _read_exact(stream, 1)
    if op is None:
        return None
    class_id = None
    if op[0] == OP_GRADIENT:
        class_id = struct.unpack("<I", _read_exact(stream, 4))[0]
    header = _read_exact(stream, TENSOR_HEADER_SIZE)
    shape = decode_header(header)
    payload = _read_exact(stream, payload_size(shape))
    x = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    return op[0], class_id, x


def serve(mode, scores=None, weights=None, bias=0.0, stdin=None, stdout=None):
    """
    Answer requests until stdin closes.

    Args:
        mode (str): "echo", "linear" or "malformed"
        scores (np.ndarray): Fixed scores for echo mode
        weights (np.ndarray): (classes, T, H, W, C) weights for linear mode
        bias (float): Bias added to every linear score
    """
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        request = _read_request(stdin)
        if request is None:
            return
        op, class_id, x = request
        if mode == "malformed":
            stdout.write(bytes([STATUS_OK]) + b"XXXX" + b"\xff" * (TENSOR_HEADER_SIZE - 4))
        elif op == OP_FORWARD:
            if mode == "echo":
                out = scores
            else:
                out = weights.reshape(len(weights), -1) @ x.reshape(-1) + bias
            stdout.write(bytes([STATUS_OK]) + encode_tensor(np.asarray(out)))
        elif op == OP_GRADIENT:
            grad = np.zeros_like(x) if mode == "echo" else weights[class_id]
            stdout.write(bytes([STATUS_OK]) + encode_tensor(grad))
        else:
            stdout.write(bytes([1]))
        stdout.flush()


def main():
    parser = argparse.ArgumentParser(description="Stub external score model")
    parser.add_argument("mode", choices=["echo", "linear", "malformed"])
    parser.add_argument("--scores", type=str, default="1.0", help="Comma separated fixed scores (echo)")
    parser.add_argument("--weights", type=str, help="Weight tensor file (linear)")
    parser.add_argument("--bias", type=float, default=0.0, help="Bias of the linear scores")
    args = parser.parse_args()

    scores = np.array([float(v) for v in args.scores.split(",")])
    weights = None
    if args.mode == "linear":
        weights = load_tensor(args.weights).astype(np.float64)
        if weights.ndim == 4:
            weights = weights[None]
    serve(args.mode, scores, weights, args.bias)
    return 0


if __name__ == "__main__":
    sys.exit(main())
