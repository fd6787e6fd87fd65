import numpy as np
import pytest

from core.cnn import Tiny3DCNN, conv3d_forward, maxpool_forward, train_toy
from core.errors import ValidationError
from core.model import LogitModel
from core.selftest import finite_difference_errors
from core.video import VideoTensor
from utils.constants import SCORE_LOGIT


def test_conv_identity_kernel(rng):
    x = rng.random((1, 4, 5, 5, 2))
    w = np.zeros((3, 3, 3, 2, 2))
    w[1, 1, 1, 0, 0] = w[1, 1, 1, 1, 1] = 1.0
    out, _ = conv3d_forward(x, w, np.zeros(2))
    assert np.allclose(out, x)


def test_maxpool_halves_every_axis():
    x = np.arange(2 * 4 * 4 * 4 * 1, dtype=np.float64).reshape(2, 4, 4, 4, 1)
    out, _ = maxpool_forward(x)
    assert out.shape == (2, 2, 2, 2, 1)
    assert out[0, 0, 0, 0, 0] == x[0, 1, 1, 1, 0]


@pytest.mark.parametrize("mode", [SCORE_LOGIT, None])
def test_input_gradient_matches_finite_differences(rng, mode):
    for seed in range(10):
        model = Tiny3DCNN(3, channels=1, input_dims=(4, 6, 6, 1), seed=seed)
        x = rng.normal(size=(4, 6, 6, 1))
        errors = finite_difference_errors(model, x, seed % 3, 100, rng, score_mode=mode)
        assert len(errors) == 100
        assert errors.max() <= 1e-4


def test_finite_differences_redraw_coordinates_at_a_kink():
    # relu(x[0]) has no derivative at 0; every other coordinate is flat
    class Kinked(LogitModel):
        def _logits(self, x):
            return np.array([max(x.flat[0], 0.0)])

        def _logits_backward(self, x, grad_logits):
            out = np.zeros_like(x)
            out.flat[0] = grad_logits[0] * (x.flat[0] > 0)
            return out

    x = np.zeros((1, 2, 2, 1))
    errors = finite_difference_errors(Kinked(1), x, 0, 4, np.random.default_rng(0), score_mode=SCORE_LOGIT)
    assert len(errors) == 3
    assert np.all(errors == 0.0)


def test_save_and_load_keep_scores(tmp_path, rng):
    model = Tiny3DCNN(4, channels=3, input_dims=(4, 8, 8, 3), seed=2, norm_mean=[0.5] * 3, norm_std=[0.25] * 3)
    x = rng.random((4, 8, 8, 3))
    path = str(tmp_path / "model.npz")
    model.save(path)
    loaded = Tiny3DCNN.load(path)
    assert loaded.input_dims == (4, 8, 8, 3)
    assert loaded.norm_mean == [0.5] * 3
    assert np.array_equal(loaded.forward(x), model.forward(x))


def test_too_small_input_rejected():
    with pytest.raises(ValidationError):
        Tiny3DCNN(2, channels=1, input_dims=(2, 8, 8, 1))


def test_training_learns_brightness():
    rng = np.random.default_rng(0)
    dataset = []
    for i in range(16):
        label = i % 2
        data = rng.random((4, 8, 8, 1)) * 0.2 + 0.7 * label
        dataset.append((VideoTensor(data), label))
    result = train_toy(dataset, learning_rate=0.05, epochs=30, batch_size=8, seed=0)
    assert len(result.losses) == 30
    assert result.losses[-1] < result.losses[0]
    assert result.model.recipe["samples"] == 16


def test_training_needs_data():
    with pytest.raises(ValidationError):
        train_toy([])
