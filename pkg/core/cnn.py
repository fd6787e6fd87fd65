#!/usr/bin/env python3
"""
Tiny 3D-CNN for the AOSA explainability engine.
A small numpy video classifier with hand-written backward passes, used as
the reference model to explain. Layers work on batches shaped
(B, T, H, W, C).
"""

import io
import json
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from tqdm import tqdm

from core.errors import ValidationError
from core.model import LogitModel, softmax
from core.tensor_io import atomic_write_bytes
from utils.constants import SCORE_PROBABILITY

logger = logging.getLogger(__name__)

KERNEL = 3


# Layers

def conv3d_forward(x, w, b):
    """
    3x3x3 convolution, stride 1, zero padding 1.

    Args:
        x (np.ndarray): (B, T, H, W, Ci)
        w (np.ndarray): (3, 3, 3, Ci, Co)
        b (np.ndarray): (Co,)

    Returns:
        tuple: (output (B, T, H, W, Co), padded input for the backward pass)
    """
    B, T, H, W, _ = x.shape
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((B, T, H, W, w.shape[4]))
    for dt in range(KERNEL):
        for dh in range(KERNEL):
            for dw in range(KERNEL):
                window = xpad[:, dt:dt + T, dh:dh + H, dw:dw + W, :]
                out += np.tensordot(window, w[dt, dh, dw], axes=([4], [0]))
    return out + b, xpad


def conv3d_backward(dout, xpad, w):
    """
    Returns:
        tuple: (dx, dw, db)
    """
    B, T, H, W, _ = dout.shape
    dxpad = np.zeros_like(xpad)
    dw_ = np.zeros_like(w)
    for dt in range(KERNEL):
        for dh in range(KERNEL):
            for dw in range(KERNEL):
                window = xpad[:, dt:dt + T, dh:dh + H, dw:dw + W, :]
                dw_[dt, dh, dw] = np.tensordot(window, dout, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
                dxpad[:, dt:dt + T, dh:dh + H, dw:dw + W, :] += np.tensordot(dout, w[dt, dh, dw], axes=([4], [1]))
    db = dout.sum(axis=(0, 1, 2, 3))
    return dxpad[:, 1:-1, 1:-1, 1:-1, :], dw_, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def maxpool_forward(x):
    """
    2x2x2 max pooling, stride 2; odd trailing rows, columns and frames are
    dropped.

    Returns:
        tuple: (output, argmax indices within each 8-cell block)
    """
    B, T, H, W, C = x.shape
    T2, H2, W2 = T // 2, H // 2, W // 2
    blocks = x[:, :2 * T2, :2 * H2, :2 * W2, :].reshape(B, T2, 2, H2, 2, W2, 2, C)
    blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(B, T2, H2, W2, C, 8)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout, arg, input_shape):
    """Route each gradient to the argmax cell of its block"""
    B, T, H, W, C = input_shape
    T2, H2, W2 = T // 2, H // 2, W // 2
    blocks = np.zeros((B, T2, H2, W2, C, 8))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(B, T2, H2, W2, C, 2, 2, 2).transpose(0, 1, 5, 2, 6, 3, 7, 4)
    dx = np.zeros(input_shape)
    dx[:, :2 * T2, :2 * H2, :2 * W2, :] = blocks.reshape(B, 2 * T2, 2 * H2, 2 * W2, C)
    return dx


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Tiny3DCNN(LogitModel):
    """
    conv3d(C->8) + ReLU + maxpool -> conv3d(8->16) + ReLU + maxpool ->
    global average pool -> linear(16->classes). All weights float64.
    """

    PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

    def __init__(self, n_classes, channels=3, input_dims=None, seed=0,
                 score_mode=SCORE_PROBABILITY, norm_mean=None, norm_std=None, model_id=None):
        super().__init__(n_classes, score_mode, input_dims, model_id)
        if input_dims is not None and min(input_dims[:3]) < 4:
            raise ValidationError(f"Tiny3DCNN needs T, H, W >= 4, got {input_dims}")
        self.channels = channels
        self.norm_mean = norm_mean
        self.norm_std = norm_std
        self.recipe = {}
        rng = np.random.default_rng(seed)
        self.params = {
            "conv1_w": _glorot(rng, (3, 3, 3, channels, 8), 27 * channels, 27 * 8),
            "conv1_b": np.zeros(8),
            "conv2_w": _glorot(rng, (3, 3, 3, 8, 16), 27 * 8, 27 * 16),
            "conv2_b": np.zeros(16),
            "fc_w": _glorot(rng, (16, n_classes), 16, n_classes),
            "fc_b": np.zeros(n_classes),
        }

    def forward_batch(self, x):
        """
        Logits of a batch.

        Args:
            x (np.ndarray): (B, T, H, W, C)

        Returns:
            tuple: (logits (B, classes), cache for backward_batch)
        """
        p = self.params
        z1, xpad1 = conv3d_forward(x, p["conv1_w"], p["conv1_b"])
        a1 = relu_forward(z1)
        p1, arg1 = maxpool_forward(a1)
        z2, xpad2 = conv3d_forward(p1, p["conv2_w"], p["conv2_b"])
        a2 = relu_forward(z2)
        p2, arg2 = maxpool_forward(a2)
        g = p2.mean(axis=(1, 2, 3))
        logits = g @ p["fc_w"] + p["fc_b"]
        cache = {"xpad1": xpad1, "z1": z1, "arg1": arg1, "a1_shape": a1.shape,
                 "xpad2": xpad2, "z2": z2, "arg2": arg2, "a2_shape": a2.shape,
                 "p2_shape": p2.shape, "g": g}
        return logits, cache

    def backward_batch(self, cache, grad_logits):
        """
        Back-propagate logit gradients.

        Args:
            cache (dict): From forward_batch
            grad_logits (np.ndarray): (B, classes)

        Returns:
            dict: Parameter gradients plus "x" for the input gradient
        """
        p = self.params
        grads = {"fc_w": cache["g"].T @ grad_logits, "fc_b": grad_logits.sum(axis=0)}
        dg = grad_logits @ p["fc_w"].T
        B, T2, H2, W2, C2 = cache["p2_shape"]
        dp2 = np.broadcast_to(dg[:, None, None, None, :] / (T2 * H2 * W2), cache["p2_shape"])
        da2 = maxpool_backward(dp2, cache["arg2"], cache["a2_shape"])
        dz2 = relu_backward(da2, cache["z2"])
        dp1, grads["conv2_w"], grads["conv2_b"] = conv3d_backward(dz2, cache["xpad2"], p["conv2_w"])
        da1 = maxpool_backward(dp1, cache["arg1"], cache["a1_shape"])
        dz1 = relu_backward(da1, cache["z1"])
        grads["x"], grads["conv1_w"], grads["conv1_b"] = conv3d_backward(dz1, cache["xpad1"], p["conv1_w"])
        return grads

    def _logits(self, x):
        logits, _ = self.forward_batch(x[None])
        return logits[0]

    def _logits_backward(self, x, grad_logits):
        _, cache = self.forward_batch(x[None])
        return self.backward_batch(cache, np.asarray(grad_logits)[None])["x"][0]

    def save(self, path):
        """
        Save weights and metadata to a numpy .npz archive.

        Args:
            path (str): Output path
        """
        meta = {
            "n_classes": self.n_classes, "channels": self.channels,
            "input_dims": list(self.input_dims) if self.input_dims else None,
            "score_mode": self.score_mode, "model_id": self.model_id,
            "norm_mean": self.norm_mean, "norm_std": self.norm_std,
            "recipe": self.recipe,
        }
        buffer = io.BytesIO()
        np.savez(buffer, meta=np.array(json.dumps(meta, sort_keys=True)), **self.params)
        atomic_write_bytes(path, buffer.getvalue())
        logger.info(f"Saved model to {path}")

    @classmethod
    def load(cls, path):
        """
        Load a model saved with save.

        Args:
            path (str): Model archive

        Returns:
            Tiny3DCNN: The model
        """
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            params = {name: archive[name].astype(np.float64) for name in cls.PARAM_NAMES}
        model = cls(meta["n_classes"], meta["channels"], meta["input_dims"],
                    score_mode=meta["score_mode"], norm_mean=meta["norm_mean"],
                    norm_std=meta["norm_std"], model_id=meta["model_id"])
        model.params = params
        model.recipe = meta.get("recipe", {})
        return model


@dataclass
class TrainResult:
    model: Tiny3DCNN
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)


def _batch_loss(model, x, labels):
    logits, cache = model.forward_batch(x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(len(labels)), labels].sum()
    correct = int((logits.argmax(axis=1) == labels).sum())
    return loss, correct, np.exp(log_probs), cache


def evaluate(model, videos, labels, batch_size=32):
    """
    Mean cross-entropy and accuracy over a dataset.

    Returns:
        tuple: (loss, accuracy)
    """
    total, correct = 0.0, 0
    for start in range(0, len(labels), batch_size):
        loss, hits, _, _ = _batch_loss(model, videos[start:start + batch_size], labels[start:start + batch_size])
        total += loss
        correct += hits
    return total / len(labels), correct / len(labels)


def train_toy(dataset, learning_rate=0.05, epochs=30, batch_size=16, seed=0,
              n_classes=None, score_mode=SCORE_PROBABILITY, norm_mean=None, norm_std=None):
    """
    Train a Tiny3DCNN with plain SGD on softmax cross-entropy.

    Args:
        dataset (list): (VideoTensor, class) pairs, all videos the same size
        learning_rate (float): SGD step
        epochs (int): Passes over the data
        batch_size (int): Videos per step
        seed (int): Seed for initialization and shuffling
        n_classes (int, optional): Class count, default max label + 1 (>= 2)
        score_mode (str): Score mode of the returned model
        norm_mean, norm_std: Normalization constants recorded in the model

    Returns:
        TrainResult: Model plus per-epoch training-set loss and accuracy
    """
    if not dataset:
        raise ValidationError("Cannot train on an empty dataset")
    videos = np.stack([np.asarray(v.data, dtype=np.float64) for v, _ in dataset])
    labels = np.array([int(c) for _, c in dataset])
    n_classes = n_classes or max(2, int(labels.max()) + 1)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(f"Labels must lie in [0, {n_classes})")

    model = Tiny3DCNN(n_classes, videos.shape[4], videos.shape[1:], seed=seed, score_mode=score_mode,
                      norm_mean=norm_mean, norm_std=norm_std)
    model.recipe = {"learning_rate": learning_rate, "epochs": epochs, "batch_size": batch_size,
                    "seed": seed, "samples": len(labels)}
    rng = np.random.default_rng(seed)
    result = TrainResult(model)

    for epoch in tqdm(range(epochs), desc="Training", disable=None):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            _, _, probs, cache = _batch_loss(model, videos[idx], labels[idx])
            grad_logits = probs.copy()
            grad_logits[np.arange(len(idx)), labels[idx]] -= 1.0
            grads = model.backward_batch(cache, grad_logits / len(idx))
            for name in Tiny3DCNN.PARAM_NAMES:
                model.params[name] -= learning_rate * grads[name]
        loss, accuracy = evaluate(model, videos, labels)
        result.losses.append(float(loss))
        result.accuracies.append(float(accuracy))
        logger.info(f"Epoch {epoch + 1}/{epochs}: loss {loss:.4f}, accuracy {accuracy:.3f}")

    model.recipe["final_loss"] = result.losses[-1]
    model.recipe["final_accuracy"] = result.accuracies[-1]
    return result
