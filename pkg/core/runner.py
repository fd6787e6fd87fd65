#!/usr/bin/env python3
"""
Runner module for the AOSA explainability engine.
Wraps an external classifier running in a separate process as a ScoreModel.

Wire protocol over the child's stdin/stdout:
    request  = opcode u8 (0x01 forward, 0x02 gradient)
               | class id u32 LE (gradient only) | tensor (AOST format)
    response = status u8 (0 = ok) | tensor (scores rank 1, gradient rank 4)
"""

import logging
import os
import selectors
import struct
import subprocess
import tempfile
import threading
import time

import numpy as np

from core.errors import ModelError, ModelTimeoutError, ProtocolError, TensorFormatError
from core.model import ScoreModel
from core.tensor_io import decode_header, encode_tensor, payload_size
from utils.constants import SCORE_PROBABILITY, TENSOR_HEADER_SIZE

logger = logging.getLogger(__name__)

OP_FORWARD = 0x01
OP_GRADIENT = 0x02
STATUS_OK = 0


class ExternalModel(ScoreModel):
    """Score model served by a child process speaking the wire protocol"""

    def __init__(self, command, n_classes, score_mode=SCORE_PROBABILITY, input_dims=None,
                 timeout=30.0, cwd=None, env=None, model_id=None):
        """
        Initialize the adapter. The process starts on first use.

        Args:
            command (list): Executable and arguments
            n_classes (int): Number of classes the child scores
            score_mode (str): Mode the child's scores are expressed in
            input_dims (tuple, optional): Expected (T, H, W, C)
            timeout (float): Seconds to wait for each response
            cwd (str, optional): Working directory of the child
            env (dict, optional): Environment of the child
        """
        super().__init__(n_classes, score_mode, input_dims, model_id or " ".join(command))
        self.command = list(command)
        self.timeout = timeout
        self.cwd = cwd
        self.env = env
        self.process = None
        self._stderr = None
        self._lock = threading.Lock()

    def start(self):
        """Start the child process if it is not running"""
        if self.process is not None and self.process.poll() is None:
            return
        # a dead child still holds its pipes and stderr file
        self.close()
        self._stderr = tempfile.TemporaryFile()
        try:
            self.process = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                            stderr=self._stderr, cwd=self.cwd, env=self.env)
        except OSError as e:
            raise ModelError(f"Could not start external model {self.command}: {e}") from e
        logger.info(f"Started external model: {' '.join(self.command)}")

    def close(self):
        """Stop the child process"""
        if self.process is not None:
            if self.process.poll() is None:
                try:
                    self.process.stdin.close()
                except OSError:
                    pass
                try:
                    self.process.wait(timeout=3)
                except subprocess.TimeoutExpired:
                    self.process.kill()
                    self.process.wait()
            for stream in (self.process.stdin, self.process.stdout):
                if stream is not None:
                    try:
                        stream.close()
                    except OSError:
                        pass
            self.process = None
        if self._stderr is not None:
            self._stderr.close()
            self._stderr = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    def _child_error(self):
        """Describe why the child stopped answering"""
        code = self.process.poll() if self.process is not None else None
        message = ""
        if self._stderr is not None:
            self._stderr.seek(0)
            message = self._stderr.read().decode("utf-8", errors="ignore").strip()
        if code is not None:
            return ModelError(f"External model exited with code {code}" + (f": {message}" if message else ""))
        return ProtocolError("External model closed its output stream")

    def _read_exact(self, n, deadline):
        fd = self.process.stdout.fileno()
        chunks, remaining = [], n
        with selectors.DefaultSelector() as selector:
            selector.register(fd, selectors.EVENT_READ)
            while remaining > 0:
                left = deadline - time.monotonic()
                if left <= 0 or not selector.select(timeout=left):
                    self.process.kill()
                    self.process.wait()
                    raise ModelTimeoutError(f"External model did not answer within {self.timeout}s")
                chunk = os.read(fd, min(remaining, 1 << 20))
                if not chunk:
                    self.process.wait(timeout=3)
                    raise self._child_error()
                chunks.append(chunk)
                remaining -= len(chunk)
        return b"".join(chunks)

    def _request(self, message, expected_shape):
        with self._lock:
            self.start()
            try:
                self.process.stdin.write(message)
                self.process.stdin.flush()
            except (BrokenPipeError, OSError):
                self.process.wait(timeout=3)
                raise self._child_error() from None
            deadline = time.monotonic() + self.timeout
            status = self._read_exact(1, deadline)[0]
            if status != STATUS_OK:
                raise ModelError(f"External model returned status {status}")
            header = self._read_exact(TENSOR_HEADER_SIZE, deadline)
            try:
                shape = decode_header(header)
            except TensorFormatError as e:
                self.close()
                raise ProtocolError(f"Malformed response header: {e}") from None
            if shape != tuple(expected_shape):
                self.close()
                raise ProtocolError(f"Response shape {shape} differs from expected {tuple(expected_shape)}")
            payload = self._read_exact(payload_size(shape), deadline)
            return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)

    def _check_mode(self, mode):
        if mode != self.score_mode:
            raise ModelError(f"External model serves {self.score_mode} scores only, {mode} requested")

    def _scores(self, x, mode):
        self._check_mode(mode)
        return self._request(bytes([OP_FORWARD]) + encode_tensor(x), (self.n_classes,))

    def _gradient(self, x, class_id, mode):
        self._check_mode(mode)
        message = bytes([OP_GRADIENT]) + struct.pack("<I", class_id) + encode_tensor(x)
        return self._request(message, x.shape)
