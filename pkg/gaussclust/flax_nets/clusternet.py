from typing import Any, Dict, Tuple, Optional
from dataclasses import dataclass, field, asdict
from functools import partial

import numpy as np
import jax
import jax.numpy as jnp
import flax.linen as nn
from flax import struct

from .convnet import ImageFeatureModule, ConvLayerModule, LayerSpec, conv_output_size
from .mlp import LabelHead
from .attention import GaussianAttentionModule
from .configs import get_architecture
from ..models.kernels import AttentionParams


@dataclass(frozen=True)
class ModelConfig:
    """
    Network configuration.

    Args:
        input_size: (height, width) of input images
        in_channels: 1 for grayscale inputs, 3 for colour
        cluster_count: number of clusters k
        layers: image feature stack, see ImageFeatureModule
        attention_map_size: (H, W); must equal the spatial size of the conv features
        kernel_temperature: alpha of the Gaussian kernel
        bn_momentum: running-average momentum of batch normalization
    """
    input_size: Tuple[int, int] = (96, 96)
    in_channels: int = 1
    cluster_count: int = 10
    layers: Tuple[LayerSpec, ...] = ()
    attention_map_size: Tuple[int, int] = (6, 6)
    kernel_temperature: float = 0.05
    bn_momentum: float = 0.9

    def __post_init__(self):
        # normalize list-typed fields so the config stays hashable
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        object.__setattr__(self, "attention_map_size", tuple(int(s) for s in self.attention_map_size))
        object.__setattr__(self, "layers", tuple(
            "M" if spec == "M" else tuple(int(v) for v in spec) for spec in self.layers))

    @classmethod
    def from_preset(cls, name: str, cluster_count: int, in_channels: int = 1,
                    kernel_temperature: float = 0.05) -> "ModelConfig":
        input_size, layers = get_architecture(name)
        return cls(
            input_size=input_size, in_channels=in_channels, cluster_count=cluster_count,
            layers=tuple(layers), attention_map_size=conv_output_size(layers, input_size),
            kernel_temperature=kernel_temperature)

    def validate(self) -> None:
        if self.cluster_count < 2:
            raise ValueError(f"cluster_count must be >= 2, got {self.cluster_count}")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.kernel_temperature <= 0:
            raise ValueError(f"kernel_temperature must be positive, got {self.kernel_temperature}")
        conv_size = conv_output_size(self.layers, self.input_size)
        if conv_size != self.attention_map_size:
            raise ValueError(
                f"attention_map_size {self.attention_map_size} does not match "
                f"the conv output size {conv_size} for input {self.input_size}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["attention_map_size"] = list(self.attention_map_size)
        d["layers"] = [spec if spec == "M" else list(spec) for spec in self.layers]
        return d


@struct.dataclass
class ModelOutput:
    """
    Network outputs for a batch; every field has a leading batch dimension.

    Args:
        label_feature: (B, k) softmax label features l
        attention_label_feature: (B, k) softmax attention label features l^a
        attention_params: kernel parameters, each (B,)
        attention_map: (B, H, W) attention maps
    """
    label_feature: jnp.ndarray
    attention_label_feature: jnp.ndarray
    attention_params: AttentionParams
    attention_map: jnp.ndarray

    def __len__(self) -> int:
        return self.label_feature.shape[0]


class ClusterNet(nn.Module):
    """
    Image feature module -> label feature module (1x1 Conv-BN-ReLU, pooling, FC stack, softmax)
    with a Gaussian attention branch fed by the same 1x1 conv features.
    """
    config: ModelConfig

    @nn.compact
    def __call__(self, x: jnp.ndarray, train: bool = False) -> ModelOutput:
        cfg = self.config
        k = cfg.cluster_count
        x = ImageFeatureModule(
            layers=cfg.layers, cluster_count=k, momentum=cfg.bn_momentum,
            name="ImageFeatures")(x, train)
        features = ConvLayerModule(
            features=k, kernel_size=1, padding=0, momentum=cfg.bn_momentum,
            layer_name="LabelConv")(x, train)
        label_feature = LabelHead((k, k), k, name="LabelHead")(features)
        attention_label_feature, params, attention_map = GaussianAttentionModule(
            map_size=cfg.attention_map_size, cluster_count=k,
            alpha=cfg.kernel_temperature, name="Attention")(features)
        return ModelOutput(label_feature, attention_label_feature, params, attention_map)


@dataclass
class ClusterModel:
    """A ClusterNet together with its variables ('params' and 'batch_stats')"""
    config: ModelConfig
    module: ClusterNet
    variables: Dict[str, Any] = field(repr=False)


def build_model(cfg: ModelConfig, seed: int = 0) -> ClusterModel:
    """Builds ClusterNet and randomly initializes its variables (deterministic given seed)"""
    cfg.validate()
    module = ClusterNet(cfg)
    dummy = jnp.zeros((1, *cfg.input_size, cfg.in_channels), jnp.float32)
    variables = module.init(jax.random.PRNGKey(seed), dummy, train=False)
    return ClusterModel(cfg, module, jax.tree_util.tree_map(jnp.asarray, dict(variables)))


@partial(jax.jit, static_argnums=(0,))
def _apply_eval(module: ClusterNet, variables: Dict[str, Any], x: jnp.ndarray) -> ModelOutput:
    return module.apply(variables, x, train=False)


def _check_input(model: ClusterModel, samples: np.ndarray) -> None:
    expected = (*model.config.input_size, model.config.in_channels)
    if samples.ndim != 4 or tuple(samples.shape[1:]) != expected:
        raise ValueError(f"Expected images of shape (B, {expected}), got {samples.shape}")


def forward(model: ClusterModel, samples: np.ndarray, train: bool = False
            ) -> Tuple[ModelOutput, Optional[Dict[str, Any]]]:
    """
    Runs the network on a (B, H, W, C) batch.
    In training mode batch statistics are used and the updated running
    averages are returned alongside the outputs; otherwise None is returned.
    """
    samples = jnp.asarray(samples)
    _check_input(model, samples)
    if train:
        outputs, updates = model.module.apply(
            model.variables, samples, train=True, mutable=['batch_stats'])
        return outputs, updates['batch_stats']
    return _apply_eval(model.module, model.variables, samples), None


def inference_assign(model: ClusterModel, samples: np.ndarray) -> np.ndarray:
    """Cluster id per sample: argmax of the label feature (ties go to the lowest index)"""
    outputs, _ = forward(model, samples, train=False)
    return assign_from_features(outputs.label_feature)


def assign_from_features(label_features: jnp.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(label_features), axis=-1)
