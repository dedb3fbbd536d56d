from typing import List, Any, Sequence

import jax
import numpy as np


def split_in_batches(array: Sequence, batch_size: int = 200) -> List[Any]:
    """Splits array into batches (the last one may be smaller)"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    num_batches = (len(array) + batch_size - 1) // batch_size
    return [array[i * batch_size:(i + 1) * batch_size] for i in range(num_batches)]


def split_in_full_batches(array: Sequence, batch_size: int) -> List[Any]:
    """Splits array into batches of exactly batch_size, dropping the remainder"""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    num_batches = len(array) // batch_size
    return [array[i * batch_size:(i + 1) * batch_size] for i in range(num_batches)]


def to_numpy_tree(tree: Any) -> Any:
    """Moves every JAX array leaf of a pytree to host memory; other leaves are kept"""
    return jax.tree_util.tree_map(
        lambda x: np.asarray(x) if isinstance(x, jax.Array) else x, tree)


def seeded_rng(seed: int, *counters: int) -> np.random.Generator:
    """
    Counter-based numpy generator. The same (seed, *counters) always yields
    the same stream, so any position in a run can be reproduced without
    storing generator state.
    """
    return np.random.default_rng([int(seed), *[int(c) for c in counters]])


def occupied_clusters(assignments: np.ndarray) -> int:
    """Number of distinct cluster ids present"""
    return int(len(np.unique(np.asarray(assignments))))
