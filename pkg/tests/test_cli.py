import csv
import os
import shlex
import sys

import numpy as np
import pytest

from core.data_loader import read_sidecar
from core.tensor_io import load_tensor, save_tensor
from core.video import SyntheticSpec, generate_synthetic
from main import main

SMALL_CONFIG = """\
# small scenes keep the toy model fast
frames = 4
height = 16
width = 16
per_class = 1
epochs = 1
batch_size = 8
s = 8
occ_h = 8
occ_w = 8
K = 1
occ_t = 2
stride_t = 1
"""


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "small.cfg"
    config.write_text(SMALL_CONFIG)
    video, _, _ = generate_synthetic(SyntheticSpec(frames=4, height=16, width=16, size=(4, 4),
                                                   start=(4.0, 2.0), motion=(0.0, 2.0)), seed=1)
    video_path = tmp_path / "clip.aost"
    save_tensor(video, str(video_path))
    return tmp_path, str(config), str(video_path)


@pytest.fixture
def trained(workspace):
    tmp_path, config, _ = workspace
    model_path = str(tmp_path / "model.npz")
    assert main(["train", "--out", model_path, "--config", config, "-q"]) == 0
    return model_path


def test_explain_writes_map_and_sidecar(workspace, trained, capsys):
    tmp_path, config, video = workspace
    out = str(tmp_path / "map.aost")
    assert main(["explain", "--model", trained, "--video", video, "--out", out, "--config", config]) == 0
    assert load_tensor(out).shape == (4, 16, 16)
    meta = read_sidecar(out + ".meta")
    assert meta["method"] == "aosa"
    assert meta["forwards"] == "5"
    assert meta["backwards"] == "0"
    assert "explain: method=aosa masks=4" in capsys.readouterr().out


def test_flags_override_config(workspace, trained):
    tmp_path, config, video = workspace
    out = str(tmp_path / "map.aost")
    assert main(["explain", "--model", trained, "--video", video, "--out", out, "--config", config,
                 "--method", "approx", "--K", "0", "--class", "2"]) == 0
    meta = read_sidecar(out + ".meta")
    assert meta["method"] == "aosa_sgl_approx"
    assert meta["class"] == "2"
    assert int(meta["forwards"]) <= 3 and int(meta["backwards"]) <= 3


def test_config_from_environment(workspace, trained, monkeypatch):
    tmp_path, config, video = workspace
    monkeypatch.setenv("AOSA_CONFIG", config)
    out = str(tmp_path / "env.aost")
    assert main(["explain", "--model", trained, "--video", video, "--out", out]) == 0
    assert read_sidecar(out + ".meta")["K"] == "1"


def test_export_masks(workspace, trained):
    tmp_path, config, video = workspace
    masks_dir = tmp_path / "masks"
    assert main(["explain", "--model", trained, "--video", video, "--out", str(tmp_path / "m.aost"),
                 "--config", config, "--export-masks", str(masks_dir)]) == 0
    files = sorted(os.listdir(masks_dir))
    assert files == [f"mask_{i:04d}.aost" for i in range(4)]
    raster = load_tensor(str(masks_dir / files[0]))
    assert raster.shape == (4, 16, 16)
    assert set(np.unique(raster)) <= {0.0, 1.0}


def test_exit_codes(workspace, trained):
    tmp_path, config, video = workspace
    out = str(tmp_path / "map.aost")
    assert main(["explain", "--model", trained, "--video", str(tmp_path / "absent.aost"), "--out", out]) == 2
    long_video = str(tmp_path / "long.aost")
    save_tensor(np.zeros((5, 16, 16, 3), dtype=np.float32), long_video)
    assert main(["explain", "--model", trained, "--video", long_video, "--out", out, "--config", config]) == 3
    assert main(["explain", "--model", trained, "--video", video, "--out", out, "--config", config,
                 "--class", "first"]) == 1
    assert main(["explain", "--video", video, "--out", out, "--config", config]) == 1
    assert not os.path.exists(out)


def test_unknown_config_key(workspace, trained):
    tmp_path, _, video = workspace
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert main(["explain", "--model", trained, "--video", video, "--out", str(tmp_path / "m.aost"),
                 "--config", str(bad)]) == 1


def test_render(workspace):
    tmp_path, _, video = workspace
    map_path = str(tmp_path / "map.aost")
    save_tensor(np.random.default_rng(0).random((4, 16, 16)), map_path)
    out = tmp_path / "frames"
    assert main(["render", "--map", map_path, "--video", video, "--out", str(out), "--panel", "1,4"]) == 0
    assert sorted(os.listdir(out)) == ["frame_0001.ppm", "frame_0002.ppm", "frame_0003.ppm", "frame_0004.ppm",
                                       "panel.png"]
    save_tensor(np.zeros((4, 8, 8)), map_path)
    assert main(["render", "--map", map_path, "--video", video, "--out", str(out)]) == 3


def test_eval_with_toy_model(workspace, trained):
    tmp_path, config, _ = workspace
    csv_path = tmp_path / "metrics.csv"
    assert main(["eval", "--model", trained, "--config", config, "--videos", "2",
                 "--methods", "aosa_sgl_approx,random", "--steps", "4", "--csv", str(csv_path)]) == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["method", "video", "AUC_del", "AUC_ins", "SPT"]
    assert len(rows) == 1 + 4 + 2
    assert [r[1] for r in rows[-2:]] == ["mean", "mean"]


def test_eval_with_external_model(workspace, repo_root):
    tmp_path, config, _ = workspace
    command = " ".join(shlex.quote(part) for part in [sys.executable, "-m", "core.stub_server", "echo",
                                                      "--scores", "0.3,0.7"])
    csv_path = tmp_path / "external.csv"
    assert main(["eval", "--external-cmd", command, "--classes", "2", "--config", config, "--videos", "1",
                 "--methods", "random", "--steps", "2", "--workers", "2", "--csv", str(csv_path)]) == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[1][:4] == ["random", "0000", "0.700000", "0.700000"]


def test_train_from_dataset_directory(tmp_path, workspace):
    from generator import generate

    _, config, _ = workspace
    data = tmp_path / "data"
    generate(str(data), per_class=1, frames=4, height=16, width=16, seed=3)
    model_path = str(tmp_path / "from_dir.npz")
    assert main(["train", "--out", model_path, "--data", str(data), "--config", config]) == 0
    assert main(["train", "--out", model_path, "--data", str(tmp_path / "missing")]) == 2


@pytest.mark.parametrize("command, paths", [("explain", ["--video", "--out"]),
                                            ("render", ["--map", "--video", "--out"])])
@pytest.mark.parametrize("flag", [["--steps", "4"], ["--radius", "3"], ["--workers", "2"]])
def test_evaluation_flags_belong_to_eval(workspace, command, paths, flag):
    tmp_path, _, video = workspace
    argv = [command]
    for name in paths:
        argv += [name, video if name == "--video" else str(tmp_path / name.strip("-"))]
    with pytest.raises(SystemExit) as excinfo:
        main(argv + flag)
    assert excinfo.value.code == 2
