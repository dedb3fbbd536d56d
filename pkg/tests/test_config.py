import sys
import json
import os
import pytest
from numpy.testing import assert_equal

sys.path.insert(0, "../gaussclust/")

from gaussclust.utils.config import (RunConfig, ModelSpec, load_run_config, save_run_config,
                                     build_dataset, build_model_config, output_root, make_run_dir)
from gaussclust.utils.genfunc import SyntheticShapesSpec
from gaussclust.utils.datasets import DatasetSpec
from gaussclust.models.trainer import TrainConfig


def synthetic_config(**kwargs):
    return RunConfig(synthetic=SyntheticShapesSpec(cluster_count=3, n_per_class=4, image_size=(64, 64)),
                     **kwargs)


def test_run_config_round_trip(tmp_path):
    cfg = synthetic_config(train=TrainConfig(epochs=2, mini_batch=8), seed=5)
    path = save_run_config(cfg, str(tmp_path / "config.json"))
    assert_equal(load_run_config(path), cfg)
    assert_equal(RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))), cfg)


def test_exactly_one_data_source():
    with pytest.raises(ValueError):
        RunConfig()
    with pytest.raises(ValueError):
        RunConfig(dataset=DatasetSpec("x", (16, 16)), synthetic=SyntheticShapesSpec())


@pytest.mark.parametrize("data", [
    {"synthetic": {}, "epochs": 3},
    {"synthetic": {"colour": True}},
    {"synthetic": {}, "train": {"lr": 0.1}},
    {"synthetic": {}, "train": {"weights": {"entropy": 1., "balance": 2.}}},
    {"synthetic": {}, "model": "stl10"},
])
def test_unknown_or_malformed_keys(data):
    with pytest.raises(ValueError):
        RunConfig.from_dict(data)


def test_load_run_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        load_run_config(str(bad))


def test_train_config_takes_run_seed():
    cfg = synthetic_config(train=TrainConfig(seed=1), seed=9)
    assert_equal(cfg.train_config().seed, 9)
    assert_equal(cfg.train.seed, 1)


def test_build_dataset_and_model_config():
    cfg = synthetic_config(model=ModelSpec(preset="shapes64", kernel_temperature=0.1))
    dataset = build_dataset(cfg)
    assert_equal(len(dataset), 12)
    model_cfg = build_model_config(cfg, dataset)
    assert_equal(model_cfg.input_size, (64, 64))
    assert_equal(model_cfg.in_channels, 1)
    assert_equal(model_cfg.cluster_count, 3)
    assert_equal(model_cfg.kernel_temperature, 0.1)


def test_build_model_config_size_mismatch():
    cfg = synthetic_config(model=ModelSpec(preset="cifar"))
    with pytest.raises(ValueError):
        build_model_config(cfg, build_dataset(cfg))


def test_output_root(monkeypatch):
    monkeypatch.delenv("GAUSSCLUST_OUTPUT_ROOT", raising=False)
    assert_equal(output_root(synthetic_config(output_dir="out")), "out")
    monkeypatch.setenv("GAUSSCLUST_OUTPUT_ROOT", "/tmp/elsewhere")
    assert_equal(output_root(synthetic_config(output_dir="out")), "/tmp/elsewhere")


def test_make_run_dir_is_unique(tmp_path):
    a = make_run_dir(str(tmp_path))
    b = make_run_dir(str(tmp_path))
    assert a != b
    assert os.path.isdir(a) and os.path.isdir(b)
    assert os.path.basename(make_run_dir(str(tmp_path), prefix="theorem")).startswith("theorem-")
