from typing import Tuple

import numpy as np
import jax
import jax.numpy as jnp
from flax import struct


DELTA_FLOOR = 1e-3


@struct.dataclass
class AttentionParams:
    """
    Parameters of an isotropic Gaussian kernel over normalized image coordinates.
    Fields may carry a leading batch dimension.

    Args:
        mu_x: kernel centre along the width axis, in [0, 1]
        mu_y: kernel centre along the height axis, in [0, 1]
        delta: spread, the covariance is delta * I (delta > 0)
    """
    mu_x: jnp.ndarray
    mu_y: jnp.ndarray
    delta: jnp.ndarray

    @classmethod
    def from_raw(cls, raw: jnp.ndarray, floor: float = DELTA_FLOOR) -> "AttentionParams":
        """Maps unconstrained (..., 3) head outputs to valid parameters"""
        mu = jax.nn.sigmoid(raw[..., :2])
        delta = jax.nn.softplus(raw[..., 2]) + floor
        return cls(mu_x=mu[..., 0], mu_y=mu[..., 1], delta=delta)


def coordinate_grid(grid: Tuple[int, int]) -> Tuple[jnp.ndarray, jnp.ndarray]:
    """
    Normalized coordinates of an H x W map; x runs along columns, y along rows,
    both spanning [0, 1].
    """
    height, width = grid
    if height < 1 or width < 1:
        raise ValueError(f"Invalid grid size {grid}")
    ys = jnp.linspace(0., 1., height)
    xs = jnp.linspace(0., 1., width)
    yy, xx = jnp.meshgrid(ys, xs, indexing='ij')
    return xx, yy


def square_scaled_distance(xx: jnp.ndarray, yy: jnp.ndarray,
                           params: AttentionParams) -> jnp.ndarray:
    r"""
    Computes :math:`(u-\mu)^T (\delta I)^{-1} (u-\mu)` for every grid point u.
    Returns shape (*batch, H, W).
    """
    mu_x = jnp.asarray(params.mu_x)[..., None, None]
    mu_y = jnp.asarray(params.mu_y)[..., None, None]
    delta = jnp.asarray(params.delta)[..., None, None]
    return ((xx - mu_x) ** 2 + (yy - mu_y) ** 2) / delta


def gaussian_attention_map(params: AttentionParams,
                           grid: Tuple[int, int],
                           alpha: float = 0.05) -> jnp.ndarray:
    """
    Gaussian kernel attention map A(u) = exp(-(1/alpha) (u-mu)^T (delta I)^{-1} (u-mu))

    Args:
        params: kernel parameters (scalars or batched)
        grid: attention map size (H, W)
        alpha: kernel temperature

    Returns:
        Attention map with shape (*batch, H, W) and values in (0, 1]
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not isinstance(params.delta, jax.core.Tracer) and np.any(np.asarray(params.delta) <= 0):
        raise ValueError("delta must be positive; map head outputs through AttentionParams.from_raw")
    xx, yy = coordinate_grid(grid)
    r2 = square_scaled_distance(xx, yy, params)
    return jnp.exp(-r2 / alpha)
