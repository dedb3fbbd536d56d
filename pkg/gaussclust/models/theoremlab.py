"""
Direct optimization of label-feature objectives over free per-sample logits,
with no images and no network. Two regimes are compared:

  dac: nonnegative unit-L2 features (squared logits, row-normalized) scored
       by pairwise binary cross-entropy on dot products. With relations
       estimated from the features themselves, the all-in-one-cluster
       solution is optimal.
  gat: softmax features scored by pairwise binary cross-entropy on cosine
       similarities, a confidence reward (-sum l_i . l_i) and an entropy
       penalty on the mean feature. Optima are balanced one-hot features.
"""

from typing import Any, Dict, Iterable, List, Optional, Sequence
from dataclasses import dataclass, asdict
from functools import partial
import csv
import json
import os
import warnings

import numpy as np
import jax
import jax.numpy as jnp
from tqdm import tqdm

from .losses import binary_cross_entropy, entropy_loss
from .pseudo_targets import RelationMatrix, relations_by_kmeans
from ..utils.utils import occupied_clusters, seeded_rng


REGIMES = ("dac", "gat")
RELATION_MODES = ("ground_truth", "self_estimated", "all_ones")
INITS = ("random", "collapsed")

ONE_HOT_THRESHOLD = 0.99
NORM_EPS = 1e-12
RELATION_DECIMALS = 4
MIN_STEP = 1e-8
COLLAPSE_LOGIT = {"dac": 1., "gat": 10.}
COLLAPSE_NOISE = 1e-3


def realize_features(V: jnp.ndarray, regime: str) -> jnp.ndarray:
    """
    Label features from free logits. 'gat': row softmax (rows sum to 1);
    'dac': squared logits normalized to unit L2 norm (nonnegative, unit rows).
    """
    if regime == "gat":
        return jax.nn.softmax(V, axis=-1)
    if regime == "dac":
        squared = V ** 2
        norm = jnp.linalg.norm(squared, axis=-1, keepdims=True)
        return squared / jnp.maximum(norm, NORM_EPS)
    raise ValueError(f"Unknown regime '{regime}', expected one of {REGIMES}")


def _relation_matrix(r) -> jnp.ndarray:
    return r.matrix if isinstance(r, RelationMatrix) else jnp.asarray(r)


def _check_pairs(features: jnp.ndarray, r: jnp.ndarray) -> None:
    n = features.shape[0]
    if r.shape != (n, n):
        raise ValueError(f"Relation matrix of shape {r.shape} does not match {n} samples")


def dac_objective_features(features: jnp.ndarray, r) -> jnp.ndarray:
    """Sum over ordered pairs of BCE(r_ij, l_i . l_j)"""
    r = _relation_matrix(r)
    _check_pairs(features, r)
    return jnp.sum(binary_cross_entropy(r.astype(features.dtype), features @ features.T))


def gat_terms(features: jnp.ndarray, r, entropy_weight: float = 3.) -> Dict[str, jnp.ndarray]:
    """
    The three parts of the softmax-regime objective:
        bce: sum over ordered pairs of BCE(r_ij, cos(l_i, l_j))
        confidence: -sum_i l_i . l_i
        entropy: entropy_weight * sum_h p_h log p_h, p = mean feature
    """
    r = _relation_matrix(r)
    _check_pairs(features, r)
    unit = features / jnp.linalg.norm(features, axis=-1, keepdims=True)
    return {
        "bce": jnp.sum(binary_cross_entropy(r.astype(features.dtype), unit @ unit.T)),
        "confidence": -jnp.sum(features * features),
        "entropy": entropy_weight * entropy_loss(features),
    }


def gat_objective_features(features: jnp.ndarray, r, entropy_weight: float = 3.) -> jnp.ndarray:
    terms = gat_terms(features, r, entropy_weight)
    return terms["bce"] + terms["confidence"] + terms["entropy"]


def dac_objective(V: jnp.ndarray, r) -> jnp.ndarray:
    """Pairwise objective of the unit-L2 regime, evaluated on free logits V"""
    return dac_objective_features(realize_features(V, "dac"), r)


def gat_objective(V: jnp.ndarray, r, entropy_weight: float = 3.) -> jnp.ndarray:
    """Softmax-regime objective (pairwise BCE + confidence + entropy), evaluated on free logits V"""
    return gat_objective_features(realize_features(V, "gat"), r, entropy_weight)


def _objective(V: jnp.ndarray, r: jnp.ndarray, entropy_weight: jnp.ndarray, regime: str) -> jnp.ndarray:
    if regime == "dac":
        return dac_objective(V, r)
    return gat_objective(V, r, entropy_weight)


@partial(jax.jit, static_argnames=("regime", "iters"))
def descend(V: jnp.ndarray, r: jnp.ndarray, entropy_weight: float, step: float,
            regime: str, iters: int) -> jnp.ndarray:
    """
    Full-batch gradient descent with a fixed initial step, halved until the
    objective does not increase. Steps that cannot decrease the objective
    (or produce non-finite values) are rejected, so the objective is monotone.
    """
    objective = partial(_objective, r=r, entropy_weight=entropy_weight, regime=regime)
    step = jnp.asarray(step, dtype=V.dtype)
    value_and_grad = jax.value_and_grad(objective)

    def iteration(_, V):
        f0, g = value_and_grad(V)

        def too_large(state):
            t, f_new = state
            return (~(f_new <= f0)) & (t > MIN_STEP)

        def halve(state):
            t, _ = state
            t = t / 2.
            return t, objective(V - t * g)

        t, f_new = jax.lax.while_loop(too_large, halve, (step, objective(V - step * g)))
        return jnp.where(f_new <= f0, V - t * g, V)

    return jax.lax.fori_loop(0, iters, iteration, V)


@dataclass
class TheoremVerdict:
    """
    Outcome of one trial.

    Args:
        one_hot_fraction: fraction of rows whose largest entry exceeds 0.99
        occupied_clusters: number of distinct argmax values, in [1, k]
        collapsed: occupied_clusters < k
        final_objective: objective of the final features
        valid: False if the optimization produced non-finite values
    """
    n: int
    k: int
    regime: str
    r_mode: str
    init: str
    seed: int
    iters: int
    one_hot_fraction: float
    occupied_clusters: int
    collapsed: bool
    final_objective: float
    valid: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def verdict_from_features(features: np.ndarray, k: int, final_objective: float, **trial: Any
                          ) -> TheoremVerdict:
    features = np.asarray(features)
    valid = bool(np.all(np.isfinite(features)) and np.isfinite(final_objective))
    occupied = occupied_clusters(np.argmax(features, axis=-1))
    return TheoremVerdict(
        k=k,
        one_hot_fraction=float(np.mean(features.max(axis=-1) > ONE_HOT_THRESHOLD)),
        occupied_clusters=occupied,
        collapsed=occupied < k,
        final_objective=float(final_objective),
        valid=valid,
        **trial)


def ground_truth_relations(n: int, k: int) -> RelationMatrix:
    """Balanced relations: sample i belongs to group i mod k"""
    return RelationMatrix(jnp.arange(n, dtype=jnp.int32) % k)


def estimate_relations(features: np.ndarray, k: int, seed: int = 0) -> RelationMatrix:
    """k-means relations on the features rounded to a few decimals"""
    rounded = np.round(np.asarray(features, dtype=np.float64), RELATION_DECIMALS)
    with warnings.catch_warnings():
        # collapsed features legitimately have fewer than k distinct rows
        warnings.simplefilter("ignore")
        return relations_by_kmeans(rounded, k, seed)


def initial_logits(n: int, k: int, regime: str, init: str, seed: int) -> jnp.ndarray:
    if init not in INITS:
        raise ValueError(f"Unknown init '{init}', expected one of {INITS}")
    rng = seeded_rng(seed, 0)
    if init == "random":
        return jnp.asarray(rng.standard_normal((n, k)), dtype=jnp.float32)
    V = np.zeros((n, k))
    V[:, 0] = COLLAPSE_LOGIT[regime]
    V += COLLAPSE_NOISE * rng.standard_normal((n, k))
    return jnp.asarray(V, dtype=jnp.float32)


def run_trial(n: int,
              k: int,
              regime: str = "gat",
              r_mode: str = "ground_truth",
              seed: int = 0,
              iters: int = 2000,
              init: str = "random",
              entropy_weight: float = 3.,
              step: float = 0.1,
              relation_every: int = 100) -> TheoremVerdict:
    """
    Optimizes free logits for one (regime, relation mode, init) setting.

    Args:
        n: number of samples
        k: number of clusters
        regime: 'dac' or 'gat'
        r_mode: 'ground_truth' (sample i in group i mod k), 'self_estimated'
            (k-means on the current features every relation_every iterations)
            or 'all_ones' (every pair related)
        seed: seed of the initial logits
        iters: gradient descent iterations
        init: 'random' (standard normal logits) or 'collapsed' (every row near e_1)
        entropy_weight: weight of the entropy penalty (gat regime only)
        step: initial step size of the backtracking descent
        relation_every: re-estimation period in self_estimated mode
    """
    if regime not in REGIMES:
        raise ValueError(f"Unknown regime '{regime}', expected one of {REGIMES}")
    if r_mode not in RELATION_MODES:
        raise ValueError(f"Unknown r_mode '{r_mode}', expected one of {RELATION_MODES}")
    if n < k or k < 1:
        raise ValueError(f"Need n >= k >= 1, got n={n}, k={k}")
    if iters < 1:
        raise ValueError(f"iters must be positive, got {iters}")
    if relation_every < 1:
        raise ValueError(f"relation_every must be positive, got {relation_every}")

    V = initial_logits(n, k, regime, init, seed)
    if r_mode == "ground_truth":
        relations = ground_truth_relations(n, k)
    elif r_mode == "all_ones":
        relations = RelationMatrix.all_ones(n)
    else:
        relations = None

    done = 0
    while done < iters:
        segment = iters - done
        if relations is None or r_mode == "self_estimated":
            features = np.asarray(realize_features(V, regime))
            relations = estimate_relations(features, k, seed)
            segment = min(segment, relation_every)
        V = descend(V, relations.matrix, entropy_weight, step, regime=regime, iters=segment)
        done += segment

    features = realize_features(V, regime)
    final = float(_objective(V, relations.matrix, entropy_weight, regime))
    return verdict_from_features(
        features, k, final, n=n, regime=regime, r_mode=r_mode, init=init, seed=seed, iters=iters)


@dataclass
class TrialSpec:
    n: int
    k: int
    regime: str = "gat"
    r_mode: str = "ground_truth"
    seed: int = 0
    iters: int = 2000
    init: str = "random"
    entropy_weight: float = 3.


def make_grid(n: int, k: int, seeds: Iterable[int], regimes: Sequence[str] = REGIMES,
              r_modes: Sequence[str] = ("ground_truth",), inits: Sequence[str] = ("random",),
              iters: int = 2000, entropy_weight: float = 3.) -> List[TrialSpec]:
    return [TrialSpec(n, k, regime, r_mode, int(seed), iters, init, entropy_weight)
            for regime in regimes for r_mode in r_modes for init in inits for seed in seeds]


def sweep(trials: Sequence[TrialSpec], progress_bar: bool = True) -> List[TheoremVerdict]:
    """Runs every trial in order; the result depends only on the trial list"""
    verdicts = []
    with tqdm(trials, desc="Theorem trials", leave=True, disable=not progress_bar) as pbar:
        for trial in pbar:
            verdict = run_trial(**asdict(trial))
            verdicts.append(verdict)
            pbar.set_postfix_str(
                f"{trial.regime}/{trial.r_mode} seed {trial.seed}: "
                f"one-hot {verdict.one_hot_fraction:.2f}, clusters {verdict.occupied_clusters}")
    return verdicts


def summarize(verdicts: Sequence[TheoremVerdict]) -> List[Dict[str, Any]]:
    """One row per (regime, r_mode, init): one-hot fraction statistics, full-occupancy share, collapse rate"""
    groups: Dict[tuple, List[TheoremVerdict]] = {}
    for v in verdicts:
        groups.setdefault((v.regime, v.r_mode, v.init), []).append(v)
    rows = []
    for (regime, r_mode, init), group in groups.items():
        fractions = np.array([v.one_hot_fraction for v in group])
        rows.append({
            "regime": regime,
            "r_mode": r_mode,
            "init": init,
            "trials": len(group),
            "mean_one_hot_fraction": float(fractions.mean()),
            "std_one_hot_fraction": float(fractions.std()),
            "all_clusters_share": float(np.mean([v.occupied_clusters == v.k for v in group])),
            "collapse_rate": float(np.mean([v.collapsed for v in group])),
            "invalid": int(sum(not v.valid for v in group)),
        })
    return rows


def write_verdicts(verdicts: Sequence[TheoremVerdict], out_dir: str,
                   summary: Optional[List[Dict[str, Any]]] = None) -> Dict[str, str]:
    """Writes verdicts.json, verdicts.csv and summary.json into out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(verdicts) if summary is None else summary
    paths = {name: os.path.join(out_dir, name)
             for name in ("verdicts.json", "verdicts.csv", "summary.json")}
    rows = [v.to_dict() for v in verdicts]
    with open(paths["verdicts.json"], "w") as f:
        json.dump(rows, f, indent=2)
    with open(paths["verdicts.csv"], "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(TheoremVerdict.__dataclass_fields__))
        writer.writeheader()
        writer.writerows(rows)
    with open(paths["summary.json"], "w") as f:
        json.dump(summary, f, indent=2)
    return paths
