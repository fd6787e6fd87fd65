import sys

import numpy as np
import pytest

from core.errors import ModelError, ModelTimeoutError, ProtocolError
from core.runner import ExternalModel
from core.tensor_io import load_tensor, save_tensor
from utils.constants import SCORE_LOGIT

DIMS = (2, 4, 4, 1)


def _stub(repo_root, *args, **kwargs):
    command = [sys.executable, "-m", "core.stub_server", *args]
    return ExternalModel(command, cwd=repo_root, timeout=20.0, **kwargs)


def test_echo_scores(repo_root, rng):
    with _stub(repo_root, "echo", "--scores", "0.2,0.8", n_classes=2) as model:
        x = rng.random(DIMS)
        assert model.forward(x) == pytest.approx([0.2, 0.8], abs=1e-7)
        assert model.forward(x) == pytest.approx([0.2, 0.8], abs=1e-7)
        assert np.array_equal(model.gradient(x, 1), np.zeros(DIMS))
        assert model.counter.snapshot() == (2, 1)


def test_linear_gradient_is_the_weights(repo_root, tmp_path, rng):
    weights_path = str(tmp_path / "w.aost")
    save_tensor(rng.normal(size=(3,) + DIMS), weights_path)
    weights = load_tensor(weights_path).astype(np.float64)
    x = rng.random(DIMS).astype(np.float32)
    with _stub(repo_root, "linear", "--weights", weights_path, "--bias", "0.5",
               n_classes=3, score_mode=SCORE_LOGIT) as model:
        assert np.array_equal(model.gradient(x, 2), weights[2])
        expected = weights.reshape(3, -1) @ x.astype(np.float64).reshape(-1) + 0.5
        assert model.forward(x) == pytest.approx(expected, rel=1e-5)


def test_malformed_header_is_a_protocol_error(repo_root):
    model = _stub(repo_root, "malformed", n_classes=2)
    try:
        with pytest.raises(ProtocolError):
            model.forward(np.zeros(DIMS))
        assert model.process is None
    finally:
        model.close()


def test_wrong_shape_is_a_protocol_error(repo_root):
    with _stub(repo_root, "echo", "--scores", "0.1,0.2,0.7", n_classes=2) as model:
        with pytest.raises(ProtocolError):
            model.forward(np.zeros(DIMS))


def test_silent_child_times_out():
    model = ExternalModel([sys.executable, "-c", "import time; time.sleep(30)"], 2, timeout=0.5)
    try:
        with pytest.raises(ModelTimeoutError):
            model.forward(np.zeros(DIMS))
    finally:
        model.close()


def test_exiting_child_reports_its_code():
    model = ExternalModel([sys.executable, "-c", "import sys; sys.stderr.write('boom'); sys.exit(3)"], 2)
    try:
        with pytest.raises(ModelError):
            model.forward(np.zeros(DIMS))
    finally:
        model.close()


def test_missing_executable():
    model = ExternalModel(["/nonexistent/aosa-model"], 2)
    with pytest.raises(ModelError):
        model.forward(np.zeros(DIMS))


def test_other_score_mode_refused(repo_root):
    with _stub(repo_root, "echo", "--scores", "0.5,0.5", n_classes=2) as model:
        with pytest.raises(ModelError):
            model.forward(np.zeros(DIMS), SCORE_LOGIT)


def test_restart_releases_dead_child_handles():
    model = ExternalModel([sys.executable, "-c", "pass"], 2)
    try:
        model.start()
        model.process.wait()
        first, first_process = model._stderr, model.process
        model.start()
        assert first.closed
        assert first_process.stdin.closed and first_process.stdout.closed
        assert not model._stderr.closed
    finally:
        model.close()
    assert model._stderr is None
