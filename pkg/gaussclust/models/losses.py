"""
Self-learning losses: transformation invariance, separability,
entropy (cluster balance) and soft attention, plus their weighted sum.
"""

from typing import Dict, Optional

import numpy as np
import jax
import jax.numpy as jnp
from jax.scipy.special import xlogy
from flax import struct


EPS = 1e-7


@struct.dataclass
class LossWeights:
    """
    Task weights. The total is
    separability * L_R + transformation * L_T + attention * L_A + entropy * L_E.
    """
    transformation: float = 5.
    attention: float = 5.
    entropy: float = 3.
    separability: float = 1.

    def validate(self) -> None:
        values = (self.transformation, self.attention, self.entropy, self.separability)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError(f"Loss weights must be finite and nonnegative, got {values}")


@struct.dataclass
class LossBreakdown:
    l_r: jnp.ndarray
    l_t: jnp.ndarray
    l_a: jnp.ndarray
    l_e: jnp.ndarray
    total: jnp.ndarray

    def to_dict(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in ("l_r", "l_t", "l_a", "l_e", "total")}


def _check_dims(a: jnp.ndarray, b: jnp.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"Label feature dimensions differ: {a.shape[-1]} vs {b.shape[-1]}")


def _safe_log(x: jnp.ndarray, eps: float = EPS) -> jnp.ndarray:
    return jnp.log(jnp.maximum(x, eps))


def cosine_similarity(l_i: jnp.ndarray, l_j: jnp.ndarray) -> jnp.ndarray:
    return jnp.sum(l_i * l_j, axis=-1) / (
        jnp.linalg.norm(l_i, axis=-1) * jnp.linalg.norm(l_j, axis=-1))


def binary_cross_entropy(r: jnp.ndarray, d: jnp.ndarray, eps: float = EPS) -> jnp.ndarray:
    """-r log d - (1 - r) log(1 - d), with log arguments floored at eps"""
    d = jnp.clip(d, 0., 1.)
    return -r * _safe_log(d, eps) - (1. - r) * _safe_log(1. - d, eps)


def transformation_loss(l_t: jnp.ndarray, l_hat: jnp.ndarray) -> jnp.ndarray:
    """
    Negative inner product between the prediction for a transformed sample
    and its (frozen) balanced target. Broadcasts over leading dimensions.
    """
    _check_dims(l_t, l_hat)
    return -jnp.sum(l_t * jax.lax.stop_gradient(l_hat), axis=-1)


def separability_loss(r_ij: jnp.ndarray, l_i: jnp.ndarray, l_j: jnp.ndarray) -> jnp.ndarray:
    """
    Binary cross-entropy between the relation indicator r_ij and the cosine
    similarity of the two label features.
    """
    _check_dims(l_i, l_j)
    if not isinstance(l_i, jax.core.Tracer) and not isinstance(l_j, jax.core.Tracer):
        if np.any(np.linalg.norm(np.asarray(l_i), axis=-1) == 0) or \
                np.any(np.linalg.norm(np.asarray(l_j), axis=-1) == 0):
            raise ValueError("separability_loss is undefined for zero-norm label features")
    return binary_cross_entropy(r_ij, cosine_similarity(l_i, l_j))


def entropy_loss(features: jnp.ndarray) -> jnp.ndarray:
    """
    sum_h p_h log p_h of the empirical cluster distribution p = mean of the
    (m, k) label features. Ranges over [-log k, 0]; minimal for uniform p.
    """
    features = jnp.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("entropy_loss expects a nonempty (m, k) array of label features")
    p = jnp.mean(features, axis=0)
    return jnp.sum(xlogy(p, p))


def attention_loss(l_a: jnp.ndarray, l_a_hat: jnp.ndarray) -> jnp.ndarray:
    """Mean per-class binary cross-entropy against the (frozen) confident target"""
    _check_dims(l_a, l_a_hat)
    target = jax.lax.stop_gradient(l_a_hat)
    return jnp.mean(binary_cross_entropy(target, l_a), axis=-1)


def pairwise_separability(relations: jnp.ndarray, features: jnp.ndarray) -> jnp.ndarray:
    """Mean separability loss over all ordered pairs (i, j) of a batch, i = j included"""
    unit = features / jnp.linalg.norm(features, axis=-1, keepdims=True)
    similarity = unit @ unit.T
    return jnp.mean(binary_cross_entropy(relations, similarity))


def combine(l_r, l_t, l_a, l_e, weights: LossWeights) -> LossBreakdown:
    total = (weights.separability * l_r + weights.transformation * l_t
             + weights.attention * l_a + weights.entropy * l_e)
    return LossBreakdown(l_r=l_r, l_t=l_t, l_a=l_a, l_e=l_e, total=total)


def total_loss(outputs, targets, weights: LossWeights,
               batch_indices: Optional[np.ndarray] = None) -> LossBreakdown:
    """
    Weighted sum of the four losses for one mini-batch.

    Args:
        outputs: ModelOutput for the (transformed) mini-batch
        targets: PseudoTargetSet restricted to the same samples, in the same order
        weights: LossWeights
        batch_indices: dataset ids of the mini-batch; checked against targets when given
    """
    if batch_indices is not None and not np.array_equal(
            np.asarray(batch_indices), np.asarray(targets.sample_indices)):
        raise ValueError("Pseudo targets are not aligned with the batch samples")
    l = outputs.label_feature
    l_a = outputs.attention_label_feature
    if l.shape != targets.l_hat.shape:
        raise ValueError(f"Batch of shape {l.shape} does not match targets of shape {targets.l_hat.shape}")
    relations = jax.lax.stop_gradient(targets.relations.matrix.astype(l.dtype))
    l_r = pairwise_separability(relations, l)
    l_t = jnp.mean(transformation_loss(l, targets.l_hat))
    l_a_term = jnp.mean(attention_loss(l_a, targets.l_a_hat))
    l_e = entropy_loss(l) + entropy_loss(l_a)
    return combine(l_r, l_t, l_a_term, l_e, weights)
