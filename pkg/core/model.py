#!/usr/bin/env python3
"""
Score model interface for the AOSA explainability engine.
A score model maps a video to class scores f(x) and returns the input
gradient of one class score. Every call is counted.
"""

import threading
from abc import ABC, abstractmethod

import numpy as np

from core.errors import DimensionMismatchError, ValidationError
from utils.constants import SCORE_LOGIT, SCORE_MODES, SCORE_PROBABILITY


class CallCounter:
    """Thread-safe count of forward and backward passes"""

    def __init__(self):
        self._lock = threading.Lock()
        self.forwards = 0
        self.backwards = 0

    def add_forward(self, n=1):
        with self._lock:
            self.forwards += n

    def add_backward(self, n=1):
        with self._lock:
            self.backwards += n

    def reset(self):
        with self._lock:
            self.forwards = 0
            self.backwards = 0

    def __getstate__(self):
        return {"forwards": self.forwards, "backwards": self.backwards}

    def __setstate__(self, state):
        self._lock = threading.Lock()
        self.forwards = state["forwards"]
        self.backwards = state["backwards"]

    def snapshot(self):
        """
        Returns:
            tuple: (forwards, backwards)
        """
        with self._lock:
            return self.forwards, self.backwards


def softmax(logits):
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / exp.sum()


def check_score_mode(mode):
    if mode not in SCORE_MODES:
        raise ValidationError(f"Unknown score mode '{mode}', expected one of {SCORE_MODES}")
    return mode


class ScoreModel(ABC):
    """
    Classifier seen as a score function. Subclasses implement _scores and
    _gradient on float64 arrays of shape (T, H, W, C).
    """

    def __init__(self, n_classes, score_mode=SCORE_PROBABILITY, input_dims=None, model_id=None):
        if n_classes < 1:
            raise ValidationError(f"A model needs at least one class, got {n_classes}")
        self.n_classes = int(n_classes)
        self.score_mode = check_score_mode(score_mode)
        self.input_dims = tuple(input_dims) if input_dims is not None else None
        self.model_id = model_id or type(self).__name__
        self.counter = CallCounter()

    def _as_input(self, video):
        data = video if isinstance(video, np.ndarray) else getattr(video, "data", video)
        x = np.asarray(data, dtype=np.float64)
        if x.ndim != 4:
            raise DimensionMismatchError(f"Model input must have rank 4, got shape {x.shape}")
        if self.input_dims is not None and tuple(x.shape) != self.input_dims:
            raise DimensionMismatchError(f"Model expects input {self.input_dims}, got {tuple(x.shape)}")
        return x

    def forward(self, video, score_mode=None):
        """
        Class scores of a video.

        Args:
            video (VideoTensor or np.ndarray): Input of shape (T, H, W, C)
            score_mode (str, optional): "probability" or "logit"; defaults to
                the model's mode

        Returns:
            np.ndarray: float64 vector of n_classes scores
        """
        x = self._as_input(video)
        mode = check_score_mode(score_mode or self.score_mode)
        self.counter.add_forward()
        return np.asarray(self._scores(x, mode), dtype=np.float64)

    def gradient(self, video, class_id, score_mode=None):
        """
        Gradient of one class score with respect to the input.

        Args:
            video (VideoTensor or np.ndarray): Input of shape (T, H, W, C)
            class_id (int): Class whose score is differentiated
            score_mode (str, optional): "probability" or "logit"

        Returns:
            np.ndarray: float64 tensor with the input's shape
        """
        x = self._as_input(video)
        mode = check_score_mode(score_mode or self.score_mode)
        if not 0 <= class_id < self.n_classes:
            raise ValidationError(f"Class {class_id} out of range for {self.n_classes} classes")
        self.counter.add_backward()
        return np.asarray(self._gradient(x, int(class_id), mode), dtype=np.float64)

    @abstractmethod
    def _scores(self, x, mode):
        """Scores of x under the given mode"""

    @abstractmethod
    def _gradient(self, x, class_id, mode):
        """Gradient of scores[class_id] with respect to x"""


class LogitModel(ScoreModel):
    """Model defined by its logits; probability mode applies softmax."""

    @abstractmethod
    def _logits(self, x):
        """Logit vector of x"""

    @abstractmethod
    def _logits_backward(self, x, grad_logits):
        """Vector-Jacobian product of the logits at x"""

    def _scores(self, x, mode):
        logits = self._logits(x)
        return softmax(logits) if mode == SCORE_PROBABILITY else logits

    def _gradient(self, x, class_id, mode):
        if mode == SCORE_LOGIT:
            grad_logits = np.zeros(self.n_classes)
            grad_logits[class_id] = 1.0
        else:
            probs = softmax(self._logits(x))
            grad_logits = -probs[class_id] * probs
            grad_logits[class_id] += probs[class_id]
        return self._logits_backward(x, grad_logits)


class AffineModel(LogitModel):
    """Logits w_k . x + b_k. Used as an exactness oracle."""

    def __init__(self, weights, bias=None, score_mode=SCORE_LOGIT, model_id=None):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 5:
            raise ValidationError(f"Affine weights must have shape (classes, T, H, W, C), got {weights.shape}")
        super().__init__(weights.shape[0], score_mode, weights.shape[1:], model_id)
        self.weights = weights
        self.bias = np.zeros(self.n_classes) if bias is None else np.asarray(bias, dtype=np.float64)

    @classmethod
    def random(cls, n_classes, dims, seed, score_mode=SCORE_LOGIT):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(size=(n_classes, *dims)), rng.normal(size=n_classes), score_mode)

    def _logits(self, x):
        flat = self.weights.reshape(self.n_classes, -1)
        return flat @ x.reshape(-1) + self.bias

    def _logits_backward(self, x, grad_logits):
        return np.tensordot(grad_logits, self.weights, axes=([0], [0]))


class ConstantModel(ScoreModel):
    """Returns fixed scores whatever the input"""

    def __init__(self, scores, score_mode=SCORE_PROBABILITY, input_dims=None, model_id=None):
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        super().__init__(len(scores), score_mode, input_dims, model_id)
        self.scores = scores

    def _scores(self, x, mode):
        return self.scores.copy()

    def _gradient(self, x, class_id, mode):
        return np.zeros_like(x)
