from typing import Sequence, Tuple
import jax.numpy as jnp
import flax.linen as nn

from .mlp import MLPLayerModule, LabelHead
from ..models.kernels import AttentionParams, gaussian_attention_map


class GaussianAttentionModule(nn.Module):
    """
    Parameter head + attention feature generator + attention label head.

    The parameter head averages the conv features over channels, flattens the
    H x W map and estimates the three kernel parameters with one linear layer.
    The attention map re-weights every feature channel before global pooling.

    Args:
        map_size: (H, W) of the incoming conv features
        cluster_count: label feature dimension
        alpha: kernel temperature
    """
    map_size: Tuple[int, int]
    cluster_count: int
    hidden_dims: Sequence[int] = None
    alpha: float = 0.05

    @nn.compact
    def __call__(self, features: jnp.ndarray) -> Tuple[jnp.ndarray, AttentionParams, jnp.ndarray]:
        spatial = jnp.mean(features, axis=-1).reshape((features.shape[0], -1))
        raw = MLPLayerModule(features=3, activation=None, layer_name="ParamHead")(spatial)
        params = AttentionParams.from_raw(raw)
        attention_map = gaussian_attention_map(params, self.map_size, self.alpha)
        weighted = features * attention_map[..., None]
        hidden = self.hidden_dims if self.hidden_dims is not None else (self.cluster_count,) * 2
        label_feature = LabelHead(hidden, self.cluster_count, name="AttentionLabelHead")(weighted)
        return label_feature, params, attention_map
