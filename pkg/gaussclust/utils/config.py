from typing import Any, Dict, Optional, Type
from dataclasses import dataclass, field, fields, asdict, replace
from datetime import datetime
import json
import os

from .datasets import DatasetSpec, ImageDataset, load_dataset
from .genfunc import SyntheticShapesSpec, make_dataset_from_spec
from .transforms import TransformConfig
from ..models.losses import LossWeights
from ..models.trainer import TrainConfig
from ..flax_nets.clusternet import ModelConfig


OUTPUT_ROOT_ENV = "GAUSSCLUST_OUTPUT_ROOT"


@dataclass
class ModelSpec:
    """Network choice: a named architecture preset and the kernel temperature alpha"""
    preset: str = "shapes64"
    kernel_temperature: float = 0.05


@dataclass
class RunConfig:
    """
    Everything needed to reproduce a training run. Exactly one of
    'dataset' (images on disk) and 'synthetic' (generated shapes) is set.
    The top-level seed drives both model initialization and training.
    """
    dataset: Optional[DatasetSpec] = None
    synthetic: Optional[SyntheticShapesSpec] = None
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ValueError("Exactly one of 'dataset' and 'synthetic' must be given")

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(_check_keys(cls, data, "config"))
        if data.get("dataset") is not None:
            data["dataset"] = _strict(DatasetSpec, data["dataset"], "dataset")
        if data.get("synthetic") is not None:
            data["synthetic"] = _strict(SyntheticShapesSpec, data["synthetic"], "synthetic")
        if "model" in data:
            data["model"] = _strict(ModelSpec, data["model"], "model")
        if "train" in data:
            train = dict(_check_keys(TrainConfig, data["train"], "train"))
            if "weights" in train:
                train["weights"] = _strict(LossWeights, train["weights"], "train.weights")
            if "transform" in train:
                train["transform"] = _strict(TransformConfig, train["transform"], "train.transform")
            data["train"] = TrainConfig(**train)
        return cls(**data)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    return value


def _check_keys(cls: Type, data: Any, where: str) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ValueError(f"'{where}' must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown key(s) in '{where}': {unknown}. Allowed: {sorted(known)}")
    return data


def _strict(cls: Type, data: Any, where: str) -> Any:
    try:
        return cls(**_check_keys(cls, data, where))
    except TypeError as e:
        raise ValueError(f"Invalid '{where}': {e}") from e


def load_run_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Config {path} is not valid JSON: {e}") from e
    return RunConfig.from_dict(data)


def save_run_config(cfg: RunConfig, path: str) -> str:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    return path


def build_dataset(cfg: RunConfig) -> ImageDataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    return make_dataset_from_spec(cfg.synthetic)


def build_model_config(cfg: RunConfig, dataset: ImageDataset) -> ModelConfig:
    model_cfg = ModelConfig.from_preset(
        cfg.model.preset, dataset.cluster_count, in_channels=dataset.channels,
        kernel_temperature=cfg.model.kernel_temperature)
    if tuple(dataset.image_size) != model_cfg.input_size:
        raise ValueError(
            f"Preset '{cfg.model.preset}' expects {model_cfg.input_size} images, "
            f"dataset provides {tuple(dataset.image_size)}")
    return model_cfg


def output_root(cfg: Optional[RunConfig] = None) -> str:
    """The run output root: $GAUSSCLUST_OUTPUT_ROOT if set, else cfg.output_dir"""
    default = cfg.output_dir if cfg is not None else "runs"
    return os.environ.get(OUTPUT_ROOT_ENV) or default


def make_run_dir(root: str, prefix: str = "run") -> str:
    """Creates a fresh timestamped directory under root"""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    path = os.path.join(root, f"{prefix}-{stamp}")
    suffix = 1
    while os.path.exists(path):
        path = os.path.join(root, f"{prefix}-{stamp}-{suffix}")
        suffix += 1
    os.makedirs(path)
    return path
