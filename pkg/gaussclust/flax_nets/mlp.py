from typing import Sequence, Any
import jax.numpy as jnp
import flax.linen as nn


class MLPLayerModule(nn.Module):
    features: int
    activation: Any = None
    layer_name: str = 'dense'

    @nn.compact
    def __call__(self, x):
        x = nn.Dense(features=self.features, name=self.layer_name)(x)
        if self.activation is not None:
            x = self.activation(x)
        return x


class LabelHead(nn.Module):
    """
    Global average pooling followed by Linear-ReLU layers and a final
    Linear layer with softmax, mapping (B, H, W, C) features to label features (B, k).
    """
    hidden_dims: Sequence[int]
    target_dim: int

    @nn.compact
    def __call__(self, x: jnp.ndarray) -> jnp.ndarray:
        x = jnp.mean(x, axis=(1, 2))
        for i, hidden_dim in enumerate(self.hidden_dims):
            x = MLPLayerModule(
                features=hidden_dim, activation=nn.relu, layer_name=f"Dense{i}")(x)
        logits = MLPLayerModule(
            features=self.target_dim, activation=None,
            layer_name=f"Dense{len(self.hidden_dims)}")(x)
        return nn.softmax(logits, axis=-1)
