import json
import os

from core.data_loader import load_dataset
from generator import class_histogram, generate
from utils.constants import DIRECTION_NAMES


def test_generate_writes_balanced_dataset(tmp_path):
    index = generate(str(tmp_path / "data"), per_class=2, frames=4, height=16, width=16, seed=7)
    assert os.path.basename(index) == "index.json"
    with open(index) as f:
        meta = json.load(f)
    assert meta["frames"] == 4 and meta["classes"] == DIRECTION_NAMES
    assert len(meta["videos"]) == 16
    samples = load_dataset(str(tmp_path / "data"))
    assert set(class_histogram(samples).values()) == {2}
    assert all(video.dims == (4, 16, 16, 3) for video, _, _ in samples)


def test_generate_is_seeded(tmp_path):
    generate(str(tmp_path / "a"), 1, 4, 16, 16, seed=2)
    generate(str(tmp_path / "b"), 1, 4, 16, 16, seed=2)
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
