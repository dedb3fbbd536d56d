import sys
import glob
import json
import os
import pytest
import numpy as onp
from numpy.testing import assert_equal
from PIL import Image

sys.path.insert(0, "../gaussclust/")

from gaussclust.cli import main, EXIT_OK, EXIT_USAGE, EXIT_RUNTIME


def write_run_config(path, checkpoint_every=0):
    config = {
        "synthetic": {"cluster_count": 3, "n_per_class": 20, "image_size": [64, 64], "seed": 0},
        "model": {"preset": "shapes64"},
        "train": {"epochs": 1, "macro_batch": 60, "sub_batch": 20, "mini_batch": 20,
                  "checkpoint_every": checkpoint_every},
        "seed": 0,
    }
    with open(path, "w") as f:
        json.dump(config, f)
    return str(path)


@pytest.fixture
def trained_run(tmp_path, monkeypatch):
    monkeypatch.setenv("GAUSSCLUST_OUTPUT_ROOT", str(tmp_path / "runs"))
    config = write_run_config(tmp_path / "run.json", checkpoint_every=1)
    assert_equal(main(["train", "--config", config]), EXIT_OK)
    runs = glob.glob(str(tmp_path / "runs" / "run-*"))
    assert_equal(len(runs), 1)
    return runs[0]


def test_train_writes_run_directory(trained_run):
    for name in ("config.json", "train_log.csv", "epoch_log.jsonl", "report.json",
                 "checkpoint_final.msgpack", "checkpoint_0000003.msgpack"):
        assert os.path.isfile(os.path.join(trained_run, name)), name
    with open(os.path.join(trained_run, "report.json")) as f:
        assert 0. <= json.load(f)["acc"] <= 1.


def test_eval(trained_run, capsys):
    capsys.readouterr()
    code = main(["eval", "--checkpoint", os.path.join(trained_run, "checkpoint_final.msgpack")])
    assert_equal(code, EXIT_OK)
    first_line = capsys.readouterr().out.splitlines()[0]
    assert {"acc", "nmi", "ari"} <= set(json.loads(first_line))


def test_eval_without_ground_truth(trained_run, tmp_path, capsys):
    capsys.readouterr()
    folder = tmp_path / "unlabeled"
    folder.mkdir()
    for i in range(3):
        Image.fromarray((onp.random.rand(64, 64) * 255).astype(onp.uint8)).save(folder / f"{i}.png")
    code = main(["eval", "--checkpoint", os.path.join(trained_run, "checkpoint_final.msgpack"),
                 "--data", str(folder)])
    assert_equal(code, EXIT_RUNTIME)
    assert "ground truth required" in capsys.readouterr().err


def test_visualize(trained_run, tmp_path):
    out = str(tmp_path / "viz")
    checkpoints = [os.path.join(trained_run, "checkpoint_0000001.msgpack"),
                   os.path.join(trained_run, "checkpoint_final.msgpack")]
    assert_equal(main(["visualize", "--checkpoint", *checkpoints, "--out", out, "--samples", "3"]), EXIT_OK)
    for name in ("scatter_00.png", "scatter_00.csv", "scatter_01.png", "clusters.png"):
        assert os.path.isfile(os.path.join(out, name)), name
    overlays = sorted(os.listdir(os.path.join(out, "attention")))
    assert_equal(overlays, ["sample_00000.png", "sample_00001.png", "sample_00002.png"])
    with Image.open(os.path.join(out, "attention", overlays[0])) as img:
        assert_equal(img.size, (64, 64))


def test_resume_from_checkpoint(trained_run, tmp_path):
    config = write_run_config(tmp_path / "more.json")
    with open(config) as f:
        data = json.load(f)
    data["train"]["epochs"] = 2
    with open(config, "w") as f:
        json.dump(data, f)
    code = main(["train", "--config", config, "--resume",
                 os.path.join(trained_run, "checkpoint_final.msgpack")])
    assert_equal(code, EXIT_OK)


def test_theorem_check(tmp_path, capsys):
    out = str(tmp_path / "theorem")
    code = main(["theorem-check", "--n", "6", "--k", "2", "--seeds", "2", "--iters", "10", "--out", out])
    assert_equal(code, EXIT_OK)
    for name in ("verdicts.json", "verdicts.csv", "summary.json"):
        assert os.path.isfile(os.path.join(out, name))
    with open(os.path.join(out, "verdicts.json")) as f:
        assert_equal(len(json.load(f)), 4)
    assert "one-hot" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["train"], ["bogus"], ["theorem-check", "--regime", "vae"],
                                  ["theorem-check", "--n", "many"]])
def test_usage_errors(argv):
    assert_equal(main(argv), EXIT_USAGE)


def test_runtime_errors(tmp_path, capsys):
    assert_equal(main(["train", "--config", str(tmp_path / "missing.json")]), EXIT_RUNTIME)
    assert_equal(main(["eval", "--checkpoint", str(tmp_path / "missing.msgpack")]), EXIT_RUNTIME)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"synthetic": {}, "optimizer": "sgd"}))
    assert_equal(main(["train", "--config", str(bad)]), EXIT_RUNTIME)
    assert "Unknown key" in capsys.readouterr().err
