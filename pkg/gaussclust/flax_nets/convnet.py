from typing import Sequence, Tuple, Union, Callable, Any
import jax.numpy as jnp
import flax.linen as nn


# A conv layer is (features, kernel_size, padding); "M" is a 2x2 stride-2 max pooling.
LayerSpec = Union[Tuple[int, int, int], str]


class ConvLayerModule(nn.Module):
    """Conv -> BatchNorm -> ReLU"""
    features: int
    kernel_size: int = 3
    padding: int = 0
    momentum: float = 0.9
    layer_name: str = None

    @nn.compact
    def __call__(self, x: jnp.ndarray, train: bool = False) -> jnp.ndarray:
        conv, _ = get_conv_and_pool_ops(self.kernel_size, self.padding)
        x = conv(features=self.features, name=self.layer_name)(x)
        x = nn.BatchNorm(
            use_running_average=not train, momentum=self.momentum,
            name=f"{self.layer_name}_bn" if self.layer_name else None)(x)
        return nn.relu(x)


class ImageFeatureModule(nn.Module):
    """
    VGG-style fully convolutional feature extractor with batch normalization.
    The stack always ends with a 1x1 Conv-BN-ReLU mapping to cluster_count channels.

    Args:
        layers: sequence of (features, kernel_size, padding) tuples and "M" pooling markers
        cluster_count: number of output channels of the final 1x1 conv
    """
    layers: Sequence[LayerSpec]
    cluster_count: int
    momentum: float = 0.9

    @nn.compact
    def __call__(self, x: jnp.ndarray, train: bool = False) -> jnp.ndarray:
        _, pool = get_conv_and_pool_ops(1, 0)
        conv_idx = 0
        for spec in self.layers:
            if spec == "M":
                x = pool(x)
                continue
            features, kernel_size, padding = spec
            x = ConvLayerModule(
                features=features, kernel_size=kernel_size, padding=padding,
                momentum=self.momentum, layer_name=f"Conv{conv_idx}")(x, train)
            conv_idx += 1
        x = ConvLayerModule(
            features=self.cluster_count, kernel_size=1, padding=0,
            momentum=self.momentum, layer_name=f"Conv{conv_idx}")(x, train)
        return x


def get_conv_and_pool_ops(kernel_size: int, padding: int) -> Tuple[Callable, Callable]:
    """
    Returns a 2D convolution constructor with explicit zero padding and
    the 2x2 stride-2 max pooling op used between VGG blocks.

    Args:
        kernel_size (int): Size of the square convolution kernel
        padding (int): Zero padding added on every side

    Returns:
        tuple: (conv_op, pool_op)
    """
    if kernel_size < 1 or padding < 0:
        raise ValueError(f"Invalid conv geometry: kernel_size={kernel_size}, padding={padding}")
    conv_op = lambda *args, **kwargs: nn.Conv(
        *args, **kwargs, kernel_size=(kernel_size, kernel_size),
        padding=((padding, padding), (padding, padding)))
    pool_op = lambda x: nn.max_pool(x, window_shape=(2, 2), strides=(2, 2))
    return conv_op, pool_op


def conv_output_size(layers: Sequence[LayerSpec], input_size: Tuple[int, int]) -> Tuple[int, int]:
    """Spatial size of ImageFeatureModule's output for a given input size"""
    height, width = input_size
    for spec in layers:
        if spec == "M":
            height, width = height // 2, width // 2
        else:
            _, kernel_size, padding = spec
            height = height + 2 * padding - kernel_size + 1
            width = width + 2 * padding - kernel_size + 1
        if height < 1 or width < 1:
            raise ValueError(f"Input size {input_size} is too small for the conv stack")
    return height, width
