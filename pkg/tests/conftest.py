"""Shared fixtures and stub score models."""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from core.model import ScoreModel  # noqa: E402
from core.video import VideoTensor  # noqa: E402
from utils.constants import SCORE_PROBABILITY  # noqa: E402


class ListedScoreModel(ScoreModel):
    """Returns the listed scores for class 0 in call order; class 1 gets 1 - score."""

    def __init__(self, scores, input_dims=None):
        super().__init__(2, SCORE_PROBABILITY, input_dims)
        self.scores = list(scores)
        self.calls = 0

    def _scores(self, x, mode):
        value = self.scores[min(self.calls, len(self.scores) - 1)]
        self.calls += 1
        return np.array([value, 1.0 - value])

    def _gradient(self, x, class_id, mode):
        return np.zeros_like(x)


class RegionMeanModel(ScoreModel):
    """Class 0 scores the mean of a marked region over all frames and channels."""

    def __init__(self, region, input_dims=None):
        super().__init__(2, SCORE_PROBABILITY, input_dims)
        self.region = region

    def _mask(self, x):
        top, left, h, w = self.region
        m = np.zeros(x.shape)
        m[:, top:top + h, left:left + w, :] = 1.0
        return m / m.sum()

    def _scores(self, x, mode):
        value = float(np.clip(np.sum(self._mask(x) * x), 0.0, 1.0))
        return np.array([value, 1.0 - value])

    def _gradient(self, x, class_id, mode):
        g = self._mask(x)
        return g if class_id == 0 else -g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_video(rng):
    return VideoTensor(rng.random((4, 16, 16, 3)).astype(np.float32))


@pytest.fixture
def repo_root():
    return ROOT
