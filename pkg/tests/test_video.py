import numpy as np
import pytest

from core.errors import ValidationError
from core.video import (GroundTruthBoxes, SyntheticSpec, VideoTensor, denormalize, direction_vector,
                        generate_dataset, generate_synthetic, normalize)
from utils.constants import NUM_DIRECTIONS


def test_video_tensor_validates_shape():
    with pytest.raises(ValidationError):
        VideoTensor(np.zeros((1, 4, 4, 3)))
    with pytest.raises(ValidationError):
        VideoTensor(np.zeros((2, 4, 4, 2)))
    with pytest.raises(ValidationError):
        VideoTensor(np.zeros((2, 4, 4)))


def test_video_tensor_is_read_only():
    data = np.zeros((2, 4, 4, 1), dtype=np.float32)
    video = VideoTensor(data)
    data[0, 0, 0, 0] = 1.0
    assert video.data[0, 0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        video.data[0, 0, 0, 0] = 2.0


def test_grayscale_uses_luminance_weights():
    data = np.zeros((2, 1, 1, 3))
    data[..., 0] = 1.0
    assert VideoTensor(data).grayscale()[0, 0, 0] == pytest.approx(0.299)


def test_synthetic_box_moves_right():
    spec = SyntheticSpec(frames=16, height=112, width=112, size=(16, 16), start=(48.0, 8.0),
                         motion=(0.0, 2.0), shape="rectangle")
    video, boxes, label = generate_synthetic(spec, seed=3)
    assert video.dims == (16, 112, 112, 3)
    assert label == 0
    for t in range(16):
        assert boxes[t] == (48, 8 + 2 * t, 16, 16)


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(texture="noise", background="drifting")
    a, _, _ = generate_synthetic(spec, seed=11)
    b, _, _ = generate_synthetic(spec, seed=11)
    assert a.data.tobytes() == b.data.tobytes()


def test_synthetic_exit_frame():
    spec = SyntheticSpec(start=(48.0, 80.0), motion=(0.0, 8.0))
    _, boxes, _ = generate_synthetic(spec, seed=0)
    # left = 80 + 8t reaches 112 at t = 4
    assert all(boxes[t] is not None for t in range(4))
    assert all(boxes[t] is None for t in range(4, 16))


def test_synthetic_box_matches_shape_pixels():
    spec = SyntheticSpec(frames=6, height=40, width=40, shape="disc", size=(11, 11), start=(5.0, 3.0),
                         motion=(1.0, 2.0), texture="flat", background="static")
    video, boxes, _ = generate_synthetic(spec, seed=5)
    background, _, _ = generate_synthetic(SyntheticSpec(frames=6, height=40, width=40, size=(1, 1),
                                                        start=(-5.0, -5.0), motion=(1.0, 1.0),
                                                        texture="flat"), seed=5)
    # the reference shape only enters at frame 5
    for t in range(5):
        changed = np.any(video.data[t] != background.data[t], axis=-1)
        rows = np.flatnonzero(changed.any(axis=1))
        cols = np.flatnonzero(changed.any(axis=0))
        top, left, h, w = boxes[t]
        assert (rows[0], cols[0], rows[-1] - rows[0] + 1, cols[-1] - cols[0] + 1) == (top, left, h, w)


def test_invalid_spec_rejected():
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticSpec(motion=(0.0, 0.0)), seed=0)
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticSpec(frames=1), seed=0)


def test_labels_follow_direction_vectors():
    for label in range(NUM_DIRECTIONS):
        spec = SyntheticSpec(frames=4, height=64, width=64, start=(24.0, 24.0),
                             motion=tuple(float(v) for v in direction_vector(label, 2)))
        assert spec.label() == label


def test_generate_dataset_is_balanced():
    samples = generate_dataset(2, 8, 24, 24, seed=1)
    labels = [label for _, _, label in samples]
    assert sorted(labels) == sorted(list(range(NUM_DIRECTIONS)) * 2)
    assert all(video.dims == (8, 24, 24, 3) for video, _, _ in samples)


def test_boxes_must_fit_frame():
    with pytest.raises(ValidationError):
        GroundTruthBoxes(((0, 0, 5, 5),), 4, 4)
    boxes = GroundTruthBoxes.from_list([[0, 0, 2, 2], None], 4, 4)
    assert boxes.annotated_frames() == [0]
    assert boxes.to_list() == [[0, 0, 2, 2], None]


def test_normalize_identity_and_zero(rng):
    video = VideoTensor(rng.random((2, 3, 3, 3)))
    assert np.allclose(normalize(video, 0.0, 1.0).data, video.data)
    flat = VideoTensor(np.full((2, 3, 3, 3), 0.5, dtype=np.float32))
    assert np.all(normalize(flat, 0.5, 0.25).data == 0.0)


def test_normalize_round_trip(rng):
    video = VideoTensor(rng.random((3, 5, 5, 3)).astype(np.float32))
    mean, std = [0.4, 0.5, 0.6], [0.2, 0.25, 0.3]
    back = denormalize(normalize(video, mean, std), mean, std)
    assert np.max(np.abs(back.data - video.data)) < 1e-6


def test_normalize_is_linear(rng):
    video = VideoTensor(rng.random((2, 4, 4, 1)))
    scaled = VideoTensor(3.0 * video.data)
    assert np.allclose(normalize(scaled, 0.0, 0.5).data, 3.0 * normalize(video, 0.0, 0.5).data)


def test_normalize_rejects_bad_std(small_video):
    with pytest.raises(ValidationError):
        normalize(small_video, 0.0, [1.0, 0.0, 1.0])
    with pytest.raises(ValidationError):
        normalize(small_video, 0.0, -1.0)
