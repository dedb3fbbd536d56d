from typing import Any, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field, asdict
from functools import partial
import csv
import json
import os

import numpy as np
import jax
import jax.numpy as jnp
import optax
from flax import serialization
from flax.training import train_state
from tqdm import tqdm

from .losses import LossWeights, LossBreakdown, total_loss
from .pseudo_targets import PseudoTargetSet, RelationMatrix, compute_pseudo_targets, dump_pseudo_targets
from ..flax_nets.clusternet import ClusterModel, ModelConfig, build_model, forward, assign_from_features
from ..utils.checkpoint import save_checkpoint, load_checkpoint, CheckpointError
from ..utils.datasets import ImageDataset, BatchView
from ..utils.metrics import evaluate_dataset
from ..utils.transforms import TransformConfig, random_transform, with_grayscale
from ..utils.utils import seeded_rng, split_in_batches, split_in_full_batches, occupied_clusters


STEP_FIELDS = ("step", "epoch", "l_r", "l_t", "l_a", "l_e", "total")


class TrainState(train_state.TrainState):
    batch_stats: Any


class NonFiniteLossError(RuntimeError):
    """Raised when an optimization step produces a NaN or infinite loss"""

    def __init__(self, step: int, breakdown: Dict[str, float]) -> None:
        super().__init__(f"Non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


@dataclass
class TrainConfig:
    """
    Two-step training configuration.

    Args:
        epochs: number of passes over the dataset
        macro_batch: M, samples per pseudo-target computation (clipped to the dataset size)
        sub_batch: m1, samples per forward pass while computing pseudo targets
        mini_batch: m2, samples per optimizer step
        learning_rate: Adam learning rate
        weights: loss weights
        transform: stochastic transformation for the invariance task
        seed: seed for initialization, shuffling, transforms and k-means
        checkpoint_every: write a checkpoint every this many steps (0 = only at the end)
        max_steps: stop after this many optimizer steps in total (None = run all epochs)
    """
    epochs: int = 100
    macro_batch: int = 1000
    sub_batch: int = 100
    mini_batch: int = 32
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    transform: TransformConfig = field(default_factory=TransformConfig)
    seed: int = 0
    checkpoint_every: int = 0
    max_steps: Optional[int] = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if min(self.macro_batch, self.sub_batch, self.mini_batch) < 1:
            raise ValueError("Batch sizes must be positive")
        if self.mini_batch > self.macro_batch:
            raise ValueError(f"mini_batch ({self.mini_batch}) must not exceed macro_batch ({self.macro_batch})")
        if self.sub_batch > self.macro_batch:
            raise ValueError(f"sub_batch ({self.sub_batch}) must not exceed macro_batch ({self.macro_batch})")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        self.weights.validate()

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["weights"] = {f: float(getattr(self.weights, f))
                        for f in ("transformation", "attention", "entropy", "separability")}
        d["transform"]["scale"] = list(self.transform.scale)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["transform"] = TransformConfig(**d.get("transform", {}))
        return cls(**d)


@dataclass
class Cursor:
    """Position of a run inside the epoch, macro-batch and mini-batch loops"""
    epoch: int = 0
    macro: int = 0
    minibatch: int = 0


class ClusterTrainer:
    """
    Two-step, memory-efficient unsupervised trainer.

    For every macro-batch of M samples, Step 1 computes frozen pseudo targets
    from label features inferred m1 samples at a time; Step 2 draws one
    random transformation per sample and runs floor(M / m2) Adam steps on
    shuffled mini-batches, optimizing all four losses jointly.

    Args:
        model: ClusterModel with initialized variables
        config: TrainConfig
        out_dir: directory for logs and checkpoints (optional)
        progress_bar: show tqdm progress
        dump_targets: also write every macro-batch's pseudo targets to out_dir/targets
    """

    def __init__(self,
                 model: ClusterModel,
                 config: TrainConfig,
                 out_dir: Optional[str] = None,
                 progress_bar: bool = True,
                 dump_targets: bool = False) -> None:
        config.validate()
        self.config = config
        self.model_config = model.config
        self.module = model.module
        self.tx = optax.adam(config.learning_rate, b1=0.9, b2=0.999)
        self.state = TrainState.create(
            apply_fn=self.module.apply,
            params=model.variables['params'],
            tx=self.tx,
            batch_stats=model.variables.get('batch_stats', {}))
        self.out_dir = out_dir
        self.progress_bar = progress_bar
        self.dump_targets = dump_targets
        self.step = 0
        self.cursor = Cursor()
        self.targets: Optional[PseudoTargetSet] = None
        self.history: List[Dict[str, float]] = []
        # steps of the current epoch taken before a resume
        self.resumed_records: List[Dict[str, float]] = []
        self.epoch_history: List[Dict[str, Any]] = []
        self.run_config: Optional[Dict[str, Any]] = None

    @property
    def model(self) -> ClusterModel:
        return ClusterModel(
            self.model_config, self.module,
            {'params': self.state.params, 'batch_stats': self.state.batch_stats})

    @partial(jax.jit, static_argnums=(0,))
    def train_step(self, state: TrainState, images: jnp.ndarray,
                   targets: PseudoTargetSet, weights: LossWeights
                   ) -> Tuple[TrainState, LossBreakdown]:
        def loss_fn(params):
            outputs, updates = state.apply_fn(
                {'params': params, 'batch_stats': state.batch_stats},
                images, train=True, mutable=['batch_stats'])
            breakdown = total_loss(outputs, targets, weights)
            return breakdown.total, (breakdown, updates)

        grads, (breakdown, updates) = jax.grad(loss_fn, has_aux=True)(state.params)
        state = state.apply_gradients(grads=grads)
        state = state.replace(batch_stats=updates['batch_stats'])
        return state, breakdown

    def _macro_batches(self, n_samples: int, epoch: int) -> List[np.ndarray]:
        size = min(self.config.macro_batch, n_samples)
        perm = seeded_rng(self.config.seed, epoch).permutation(n_samples)
        return split_in_full_batches(perm, size)

    def _check_dataset(self, dataset: ImageDataset) -> None:
        cfg = self.model_config
        if tuple(dataset.image_size) != tuple(cfg.input_size) or dataset.channels != cfg.in_channels:
            raise ValueError(
                f"Dataset images {dataset.image_size}x{dataset.channels} do not match "
                f"the model input {cfg.input_size}x{cfg.in_channels}")
        if dataset.cluster_count != cfg.cluster_count:
            raise ValueError(
                f"Dataset cluster_count {dataset.cluster_count} differs from the model's {cfg.cluster_count}")

    def train(self, dataset: ImageDataset) -> List[Dict[str, float]]:
        """
        Runs (or continues) training until config.epochs or config.max_steps is reached.

        Returns:
            per-step loss history (dicts with l_r, l_t, l_a, l_e, total)
        """
        self._check_dataset(dataset)
        cfg = self.config
        n_samples = len(dataset)
        if n_samples < cfg.mini_batch:
            raise ValueError(f"Dataset has {n_samples} samples, fewer than mini_batch={cfg.mini_batch}")
        tcfg = with_grayscale(cfg.transform, dataset.grayscale)
        k = self.model_config.cluster_count

        with tqdm(total=cfg.epochs, initial=self.cursor.epoch, desc="Training Progress",
                  leave=True, disable=not self.progress_bar) as pbar:
            while self.cursor.epoch < cfg.epochs:
                epoch = self.cursor.epoch
                macro_batches = self._macro_batches(n_samples, epoch)
                while self.cursor.macro < len(macro_batches):
                    b = self.cursor.macro
                    indices = macro_batches[b]
                    seeds = seeded_rng(cfg.seed, epoch, b).integers(2**31, size=3)
                    if self.targets is None:
                        # Step 1
                        self.targets = compute_pseudo_targets(
                            self.model, BatchView(dataset, indices), cfg.sub_batch, k,
                            seed=int(seeds[0]))
                        if self.dump_targets and self.out_dir is not None:
                            self._dump_targets(epoch, b)
                    # Step 2
                    order = seeded_rng(cfg.seed, epoch, b, 1).permutation(len(indices))
                    minibatches = split_in_full_batches(order, cfg.mini_batch)
                    while self.cursor.minibatch < len(minibatches):
                        if cfg.max_steps is not None and self.step >= cfg.max_steps:
                            return self._finish()
                        positions = minibatches[self.cursor.minibatch]
                        self._optimize(dataset, indices, positions, tcfg, int(seeds[1]))
                        self.cursor.minibatch += 1
                        if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                            self._save_periodic()
                    self.targets = None
                    self.cursor.minibatch = 0
                    self.cursor.macro += 1
                self.cursor.macro = 0
                self.cursor.epoch += 1
                summary = self._end_epoch(dataset, epoch)
                pbar.set_postfix_str(
                    f"Epoch {epoch + 1}/{cfg.epochs}, Avg Loss: {summary['total']:.4f}, "
                    f"Clusters: {summary['occupied_clusters']}")
                pbar.update(1)

        return self._finish()

    def _finish(self) -> List[Dict[str, float]]:
        if self.out_dir is not None:
            self.save(os.path.join(self.out_dir, "checkpoint_final.msgpack"))
        return self.history

    def _optimize(self, dataset: ImageDataset, indices: np.ndarray, positions: np.ndarray,
                  tcfg: TransformConfig, transform_seed: int) -> None:
        batch = dataset.get_batch(indices[positions], keep_color=True)
        batch = random_transform(batch, tcfg, transform_seed)
        targets = self.targets.take(positions)
        if not np.array_equal(batch.indices, np.asarray(targets.sample_indices)):
            raise ValueError("Pseudo targets are not aligned with the batch samples")
        new_state, breakdown = self.train_step(
            self.state, jnp.asarray(batch.samples), targets, self.config.weights)
        record = breakdown.to_dict()
        if not np.isfinite(record["total"]):
            if self.out_dir is not None:
                self.save(os.path.join(self.out_dir, "checkpoint_last_finite.msgpack"))
            raise NonFiniteLossError(self.step + 1, record)
        self.state = new_state
        self.step += 1
        record = {"step": self.step, "epoch": self.cursor.epoch, **record}
        self.history.append(record)
        self._log_step(record)

    def _log_step(self, record: Dict[str, float]) -> None:
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, "train_log.csv")
        new_file = not os.path.exists(path)
        os.makedirs(self.out_dir, exist_ok=True)
        with open(path, "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(STEP_FIELDS))
            if new_file:
                writer.writeheader()
            writer.writerow(record)

    def _end_epoch(self, dataset: ImageDataset, epoch: int) -> Dict[str, Any]:
        records = self._epoch_records(epoch)
        summary: Dict[str, Any] = {"epoch": epoch + 1}
        for name in ("l_r", "l_t", "l_a", "l_e", "total"):
            summary[name] = float(np.mean([r[name] for r in records])) if records else float("nan")
        ids = final_inference(self.model, dataset, self.config.sub_batch)
        summary["occupied_clusters"] = occupied_clusters(ids)
        if dataset.has_ground_truth:
            summary.update({k: v for k, v in evaluate_dataset(ids, dataset).to_dict().items()
                            if k in ("acc", "nmi", "ari")})
        self.epoch_history.append(summary)
        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(os.path.join(self.out_dir, "epoch_log.jsonl"), "a") as f:
                f.write(json.dumps(summary) + "\n")
        return summary

    def _epoch_records(self, epoch: int) -> List[Dict[str, float]]:
        return [r for r in self.resumed_records + self.history if r["epoch"] == epoch]

    def _dump_targets(self, epoch: int, b: int) -> None:
        directory = os.path.join(self.out_dir, "targets")
        os.makedirs(directory, exist_ok=True)
        dump_pseudo_targets(self.targets, os.path.join(directory, f"targets_e{epoch:04d}_b{b:04d}.npz"))

    def _save_periodic(self) -> None:
        if self.out_dir is not None:
            self.save(os.path.join(self.out_dir, f"checkpoint_{self.step:07d}.msgpack"))

    def state_dict(self) -> Dict[str, Any]:
        records = self._epoch_records(self.cursor.epoch)
        targets = None
        if self.targets is not None:
            targets = {
                "l_hat": self.targets.l_hat,
                "l_a_hat": self.targets.l_a_hat,
                "assignments": self.targets.relations.assignments,
                "sample_indices": self.targets.sample_indices,
            }
        return {
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
            "params": self.state.params,
            "batch_stats": self.state.batch_stats,
            "opt_state": serialization.to_state_dict(self.state.opt_state),
            "step": self.step,
            "cursor": asdict(self.cursor),
            "targets": targets,
            "epoch_records": {name: np.asarray([r[name] for r in records], dtype=np.float64)
                              for name in STEP_FIELDS},
            "run_config": self.run_config,
        }

    def save(self, path: str) -> str:
        """Writes a checkpoint that resume() restores exactly"""
        return save_checkpoint(path, self.state_dict())

    @classmethod
    def resume(cls, path: str, dataset: Optional[ImageDataset] = None,
               out_dir: Optional[str] = None, progress_bar: bool = True,
               dump_targets: bool = False, **config_overrides: Any) -> "ClusterTrainer":
        """
        Rebuilds a trainer from a checkpoint written by save(). Training then
        continues on the same trajectory as an uninterrupted run.

        Args:
            path: checkpoint file
            dataset: optional dataset the run continues on; its cluster count is checked
            config_overrides: TrainConfig fields to replace (e.g. epochs, max_steps)
        """
        payload = load_checkpoint(path)
        try:
            model_config = ModelConfig(**payload["model_config"])
            train_config = TrainConfig.from_dict({**payload["train_config"], **config_overrides})
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"Checkpoint {path} has an invalid configuration: {e}") from e
        if dataset is not None and dataset.cluster_count != model_config.cluster_count:
            raise CheckpointError(
                f"Checkpoint was trained with k={model_config.cluster_count}, "
                f"dataset has k={dataset.cluster_count}")
        model = load_model(payload)
        trainer = cls(model, train_config, out_dir=out_dir, progress_bar=progress_bar,
                      dump_targets=dump_targets)
        opt_state = serialization.from_state_dict(trainer.state.opt_state, payload["opt_state"])
        trainer.state = trainer.state.replace(step=int(payload["step"]), opt_state=opt_state)
        trainer.step = int(payload["step"])
        trainer.cursor = Cursor(**{k: int(v) for k, v in payload["cursor"].items()})
        trainer.run_config = payload.get("run_config")
        columns = payload.get("epoch_records") or {}
        trainer.resumed_records = [
            {name: (int(values[i]) if name in ("step", "epoch") else float(values[i]))
             for name, values in columns.items()}
            for i in range(len(columns.get("step", [])))]
        t = payload.get("targets")
        if t is not None:
            trainer.targets = PseudoTargetSet(
                l_hat=jnp.asarray(t["l_hat"]),
                relations=RelationMatrix(jnp.asarray(t["assignments"])),
                l_a_hat=jnp.asarray(t["l_a_hat"]),
                sample_indices=jnp.asarray(t["sample_indices"]))
        return trainer


def load_model(payload_or_path) -> ClusterModel:
    """ClusterModel with the variables stored in a checkpoint (path or loaded payload)"""
    payload = load_checkpoint(payload_or_path) if isinstance(payload_or_path, str) else payload_or_path
    try:
        cfg = ModelConfig(**payload["model_config"])
        template = build_model(cfg, seed=0)
        variables = serialization.from_state_dict(
            template.variables, {'params': payload["params"], 'batch_stats': payload["batch_stats"]})
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint does not match its model configuration: {e}") from e
    variables = jax.tree_util.tree_map(jnp.asarray, variables)
    return ClusterModel(cfg, template.module, variables)


def train(dataset: ImageDataset, model: ClusterModel, cfg: TrainConfig,
          out_dir: Optional[str] = None, progress_bar: bool = True
          ) -> Tuple[ClusterTrainer, List[Dict[str, float]]]:
    """Trains model on dataset; returns the trainer (holding the final state) and the loss history"""
    trainer = ClusterTrainer(model, cfg, out_dir=out_dir, progress_bar=progress_bar)
    history = trainer.train(dataset)
    return trainer, history


def resume(path: str, dataset: Optional[ImageDataset] = None, **kwargs: Any) -> ClusterTrainer:
    return ClusterTrainer.resume(path, dataset, **kwargs)


def predict_label_features(model: ClusterModel, dataset: ImageDataset, batch_size: int = 100
                           ) -> np.ndarray:
    """(N, k) label features of the whole dataset in evaluation mode"""
    features = []
    for chunk in split_in_batches(np.arange(len(dataset)), batch_size):
        outputs, _ = forward(model, dataset.get_batch(chunk).samples, train=False)
        features.append(np.asarray(outputs.label_feature))
    return np.concatenate(features, axis=0)


def final_inference(model: ClusterModel, dataset: ImageDataset, batch_size: int = 100) -> np.ndarray:
    """Cluster id of every dataset sample: argmax of its label feature, no k-means"""
    return assign_from_features(predict_label_features(model, dataset, batch_size))


def repeat_training(dataset: ImageDataset, model_config: ModelConfig, cfg: TrainConfig,
                    seeds: Sequence[int], progress_bar: bool = False) -> Dict[str, Any]:
    """
    Trains one model per seed and evaluates each on the dataset's ground truth.
    Returns per-seed reports with the best, mean and standard deviation of ACC.
    """
    runs = []
    for seed in seeds:
        run_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": int(seed)})
        trainer, _ = train(dataset, build_model(model_config, seed=int(seed)), run_cfg,
                           progress_bar=progress_bar)
        ids = final_inference(trainer.model, dataset, cfg.sub_batch)
        result = {"seed": int(seed), "occupied_clusters": occupied_clusters(ids)}
        if dataset.has_ground_truth:
            result.update({k: v for k, v in evaluate_dataset(ids, dataset).to_dict().items()
                           if k in ("acc", "nmi", "ari")})
        runs.append(result)
    accs = np.array([r["acc"] for r in runs if "acc" in r])
    summary = {"runs": runs}
    if len(accs):
        summary.update(best_acc=float(accs.max()), mean_acc=float(accs.mean()), std_acc=float(accs.std()))
    return summary
