import numpy as np
import pytest

from core.errors import DimensionMismatchError, ValidationError
from core.render import encode_ppm, normalize_map, overlay, render_panel, write_overlays
from core.video import VideoTensor


def test_normalize_map():
    values = np.array([[[-1.0, 0.0], [1.0, 4.0]]])
    assert normalize_map(values).tolist() == [[[0.0, 0.0], [0.25, 1.0]]]
    assert np.all(normalize_map(-np.ones((1, 2, 2))) == 0.0)


def test_zero_map_leaves_grayscale():
    video = VideoTensor(np.full((2, 3, 3, 3), 0.2))
    frames = overlay(video, np.zeros((2, 3, 3)))
    assert frames.dtype == np.uint8
    assert frames.shape == (2, 3, 3, 3)
    assert np.all(frames == 51)


def test_peak_pixel_blends_colormap():
    video = VideoTensor(np.zeros((2, 2, 2, 1)))
    values = np.zeros((2, 2, 2))
    values[1, 0, 0] = 2.0
    frames = overlay(video, values, alpha=1.0)
    # the top of jet is dark red
    top = frames[1, 0, 0]
    assert top[0] > 100 and top[1] == 0 and top[2] == 0
    assert np.all(frames[0] == 0)


def test_overlay_validation():
    video = VideoTensor(np.zeros((2, 2, 2, 1)))
    with pytest.raises(DimensionMismatchError):
        overlay(video, np.zeros((2, 3, 2)))
    with pytest.raises(ValidationError):
        overlay(video, np.zeros((2, 2, 2)), alpha=1.5)


def test_ppm_frames(tmp_path):
    frames = np.zeros((3, 2, 4, 3), dtype=np.uint8)
    frames[1, 0, 0] = (255, 0, 0)
    data = encode_ppm(frames[1])
    assert data.startswith(b"P6\n4 2\n255\n")
    assert len(data) == len(b"P6\n4 2\n255\n") + 2 * 4 * 3
    paths = write_overlays(frames, str(tmp_path / "frames"))
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["frame_0001.ppm", "frame_0002.ppm", "frame_0003.ppm"]
    with open(paths[1], "rb") as f:
        assert f.read() == data


def test_panel_is_png(tmp_path, rng):
    video = VideoTensor(rng.random((6, 8, 8, 3)))
    path = tmp_path / "panel.png"
    render_panel(video, rng.random((6, 8, 8)), str(path), frames=[1, 3, 6, 9], title="aosa")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_panel_needs_frames_in_range(tmp_path):
    video = VideoTensor(np.zeros((2, 4, 4, 1)))
    with pytest.raises(ValidationError):
        render_panel(video, np.zeros((2, 4, 4)), str(tmp_path / "p.png"), frames=[5])
