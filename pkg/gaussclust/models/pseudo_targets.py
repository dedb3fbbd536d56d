"""
Step 1 of the two-step learning algorithm: label features of a macro-batch
are computed in memory-bounded sub-batches, then turned into frozen targets
(balanced targets, pairwise relations from k-means, confident attention targets).
"""

from typing import Union
import warnings

import numpy as np
import jax.numpy as jnp
from flax import struct
from sklearn.cluster import KMeans
from tqdm import tqdm

from ..flax_nets.clusternet import ClusterModel, forward
from ..utils.datasets import ImageBatch, BatchView
from ..utils.utils import split_in_batches


FREQ_EPS = 1e-8
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


@struct.dataclass
class RelationMatrix:
    """
    Pairwise same-cluster indicators induced by a partition: r_ij = 1 iff
    samples i and j share a cluster (so r is reflexive, symmetric and transitive).
    Stored as the partition itself; the dense matrix is built on demand.
    """
    assignments: jnp.ndarray

    @property
    def matrix(self) -> jnp.ndarray:
        a = self.assignments
        return (a[:, None] == a[None, :]).astype(jnp.float32)

    def take(self, positions) -> "RelationMatrix":
        return RelationMatrix(self.assignments[positions])

    def __len__(self) -> int:
        return self.assignments.shape[0]

    @classmethod
    def all_ones(cls, size: int) -> "RelationMatrix":
        return cls(jnp.zeros(size, dtype=jnp.int32))


@struct.dataclass
class PseudoTargetSet:
    """
    Frozen targets of one macro-batch.

    Args:
        l_hat: (M, k) balanced transformation targets
        relations: RelationMatrix over the M samples
        l_a_hat: (M, k) confident attention targets
        sample_indices: (M,) dataset ids, aligned with the rows above
    """
    l_hat: jnp.ndarray
    relations: RelationMatrix
    l_a_hat: jnp.ndarray
    sample_indices: jnp.ndarray

    def __len__(self) -> int:
        return self.l_hat.shape[0]

    def take(self, positions) -> "PseudoTargetSet":
        positions = jnp.asarray(positions)
        return PseudoTargetSet(
            l_hat=self.l_hat[positions],
            relations=self.relations.take(positions),
            l_a_hat=self.l_a_hat[positions],
            sample_indices=self.sample_indices[positions])


def batched_label_features(model: ClusterModel,
                           macro_batch: Union[ImageBatch, BatchView],
                           m1: int,
                           progress_bar: bool = False) -> np.ndarray:
    """
    Label features of a macro-batch computed m1 samples at a time in
    evaluation mode. With a BatchView, at most m1 images are decoded at once.
    If this runs out of device memory, lower m1; results do not depend on it.
    """
    if m1 < 1:
        raise ValueError(f"Sub-batch size m1 must be positive, got {m1}")
    size = len(macro_batch)
    if size == 0:
        raise ValueError("Empty macro-batch")
    features = []
    for chunk in tqdm(split_in_batches(np.arange(size), m1), desc="Step 1", leave=False,
                      disable=not progress_bar):
        if isinstance(macro_batch, BatchView):
            samples = macro_batch.materialize(chunk).samples
        else:
            samples = macro_batch.samples[chunk]
        outputs, _ = forward(model, samples, train=False)
        features.append(np.asarray(outputs.label_feature))
        del samples
    return np.concatenate(features, axis=0)


def assignment_frequency(l: jnp.ndarray, eps: float = FREQ_EPS) -> jnp.ndarray:
    """z_h = sum_j l_jh; empty clusters get z_h = eps"""
    z = jnp.sum(jnp.asarray(l), axis=0)
    return jnp.where(z > 0, z, eps)


def _normalize_rows(x: jnp.ndarray) -> jnp.ndarray:
    return x / jnp.sum(x, axis=-1, keepdims=True)


def balanced_target(l: jnp.ndarray, eps: float = FREQ_EPS) -> jnp.ndarray:
    """Divides every column by its assignment frequency, then renormalizes rows"""
    l = jnp.asarray(l)
    return _normalize_rows(l / assignment_frequency(l, eps))


def confident_attention_target(l: jnp.ndarray, eps: float = FREQ_EPS) -> jnp.ndarray:
    """Squares the label features, divides by the (raw) assignment frequency, renormalizes rows"""
    l = jnp.asarray(l)
    return _normalize_rows(l ** 2 / assignment_frequency(l, eps))


def relations_by_kmeans(l: np.ndarray, k: int, seed: int = 0) -> RelationMatrix:
    """
    Relation matrix from k-means (k-means++ init, Euclidean) on the rows of l.
    When l has fewer than k distinct rows, every distinct row forms its own cluster.
    """
    l = np.asarray(l, dtype=np.float64)
    if l.shape[0] < k:
        raise ValueError(f"Need at least k={k} samples for k-means, got {l.shape[0]}")
    n_distinct = len(np.unique(l, axis=0))
    n_clusters = min(k, n_distinct)
    if n_clusters < k:
        warnings.warn(
            f"Only {n_distinct} distinct label features for k={k}; some clusters stay empty",
            stacklevel=2)
    if n_clusters == 1:
        return RelationMatrix.all_ones(len(l))
    kmeans = KMeans(
        n_clusters=n_clusters, init='k-means++', n_init=1,
        max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOL, random_state=seed)
    assignments = kmeans.fit_predict(l)
    return RelationMatrix(jnp.asarray(assignments, dtype=jnp.int32))


def targets_from_features(l: np.ndarray, sample_indices: np.ndarray, k: int, seed: int = 0
                          ) -> PseudoTargetSet:
    l = jnp.asarray(l)
    return PseudoTargetSet(
        l_hat=balanced_target(l),
        relations=relations_by_kmeans(np.asarray(l), k, seed),
        l_a_hat=confident_attention_target(l),
        sample_indices=jnp.asarray(sample_indices))


def compute_pseudo_targets(model: ClusterModel,
                           macro_batch: Union[ImageBatch, BatchView],
                           m1: int,
                           k: int,
                           seed: int = 0,
                           progress_bar: bool = False) -> PseudoTargetSet:
    """Step 1: label features in sub-batches of m1, then the three pseudo targets"""
    l = batched_label_features(model, macro_batch, m1, progress_bar)
    return targets_from_features(l, macro_batch.indices, k, seed)


def dump_pseudo_targets(targets: PseudoTargetSet, path: str) -> str:
    """Writes a PseudoTargetSet to an .npz archive (debugging aid)"""
    np.savez_compressed(
        path,
        l_hat=np.asarray(targets.l_hat),
        l_a_hat=np.asarray(targets.l_a_hat),
        assignments=np.asarray(targets.relations.assignments),
        sample_indices=np.asarray(targets.sample_indices))
    return path
