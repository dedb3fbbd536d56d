"""
Command-line entry point.

    gaussclust train --config run.json [--resume checkpoint.msgpack]
    gaussclust eval --checkpoint checkpoint.msgpack [--data DIR]
    gaussclust visualize --checkpoint CKPT [CKPT ...] [--data DIR] --out DIR
    gaussclust theorem-check --n 60 --k 3 --seeds 20 --regime gat

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from typing import Any, Dict, Optional, Sequence
import argparse
import json
import os
import sys

import numpy as np

from .__version__ import version
from .flax_nets.clusternet import build_model, forward
from .models import theoremlab
from .models.trainer import ClusterTrainer, load_model, predict_label_features, final_inference
from .utils.checkpoint import load_checkpoint
from .utils.config import (RunConfig, load_run_config, save_run_config, build_dataset,
                           build_model_config, output_root, make_run_dir)
from .utils.datasets import DatasetSpec, ImageDataset, load_dataset, has_label_source, dataset_summary
from .utils.metrics import evaluate_dataset, dataset_ground_truth
from .utils.visualize import (scatter_map, render_scatter, render_attention_overlay,
                              render_cluster_gallery)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dataset_for_checkpoint(payload: Dict[str, Any], data_path: Optional[str]) -> ImageDataset:
    """The dataset to evaluate on: --data if given, else the one recorded with the run"""
    model_cfg = payload["model_config"]
    if data_path is not None:
        if not os.path.isdir(data_path):
            raise FileNotFoundError(f"Dataset path does not exist: {data_path}")
        spec = DatasetSpec(
            root_path=data_path, image_size=tuple(model_cfg["input_size"]),
            grayscale=model_cfg["in_channels"] == 1, cluster_count=model_cfg["cluster_count"],
            has_ground_truth=has_label_source(data_path))
        return load_dataset(spec)
    if payload.get("run_config") is None:
        raise ValueError("Checkpoint carries no run configuration; pass --data")
    return build_dataset(RunConfig.from_dict(payload["run_config"]))


def command_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    dataset = build_dataset(cfg)
    run_dir = make_run_dir(output_root(cfg))
    save_run_config(cfg, os.path.join(run_dir, "config.json"))
    print(f"Run directory: {run_dir}")
    print(f"Dataset: {json.dumps(dataset_summary(dataset))}")

    if args.resume:
        trainer = ClusterTrainer.resume(
            args.resume, dataset, out_dir=run_dir, dump_targets=args.dump_targets,
            epochs=cfg.train.epochs, max_steps=cfg.train.max_steps)
    else:
        model_cfg = build_model_config(cfg, dataset)
        trainer = ClusterTrainer(build_model(model_cfg, seed=cfg.seed), cfg.train_config(),
                                 out_dir=run_dir, dump_targets=args.dump_targets)
    trainer.run_config = cfg.to_dict()
    trainer.train(dataset)

    if dataset.has_ground_truth:
        report = evaluate_dataset(final_inference(trainer.model, dataset, trainer.config.sub_batch), dataset)
        with open(os.path.join(run_dir, "report.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        print(report.format_table())
    return EXIT_OK


def command_eval(args: argparse.Namespace) -> int:
    payload = load_checkpoint(args.checkpoint)
    model = load_model(payload)
    dataset = _dataset_for_checkpoint(payload, args.data)
    if not dataset.has_ground_truth:
        raise ValueError("ground truth required")
    report = evaluate_dataset(final_inference(model, dataset, args.batch_size), dataset)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "contingency"}))
    print(report.format_table())
    return EXIT_OK


def command_visualize(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    truth, dataset, model = None, None, None
    for i, path in enumerate(args.checkpoint):
        payload = load_checkpoint(path)
        model = load_model(payload)
        if dataset is None:
            dataset = _dataset_for_checkpoint(payload, args.data)
            truth = dataset_ground_truth(dataset) if dataset.has_ground_truth else None
        features = predict_label_features(model, dataset, args.batch_size)
        ids = np.argmax(features, axis=-1)
        acc = evaluate_dataset(ids, dataset).acc if truth is not None else None
        smap = scatter_map(features, truth, acc)
        name = os.path.splitext(os.path.basename(path))[0]
        render_scatter(smap, os.path.join(args.out, f"scatter_{i:02d}.png"),
                       csv_path=os.path.join(args.out, f"scatter_{i:02d}.csv"), title=name)

    render_cluster_gallery(dataset, ids, features.max(axis=-1), os.path.join(args.out, "clusters.png"))
    attention_dir = os.path.join(args.out, "attention")
    os.makedirs(attention_dir, exist_ok=True)
    indices = np.arange(min(args.samples, len(dataset)))
    outputs, _ = forward(model, dataset.get_batch(indices).samples)
    images = dataset.get_batch(indices, keep_color=True).samples
    for idx, image, attention_map in zip(indices, images, np.asarray(outputs.attention_map)):
        render_attention_overlay(image, attention_map, os.path.join(attention_dir, f"sample_{idx:05d}.png"))
    print(f"Wrote {len(args.checkpoint)} scatter map(s) and {len(indices)} attention overlay(s) to {args.out}")
    return EXIT_OK


def command_theorem_check(args: argparse.Namespace) -> int:
    regimes = theoremlab.REGIMES if args.regime == "both" else (args.regime,)
    trials = theoremlab.make_grid(
        args.n, args.k, range(args.seeds), regimes=regimes, r_modes=(args.r_mode,),
        inits=(args.init,), iters=args.iters, entropy_weight=args.entropy_weight)
    verdicts = theoremlab.sweep(trials)
    summary = theoremlab.summarize(verdicts)
    out = args.out or make_run_dir(output_root(), prefix="theorem")
    paths = theoremlab.write_verdicts(verdicts, out, summary)
    for row in summary:
        print(f"{row['regime']:>4s} {row['r_mode']:>15s} {row['init']:>9s}: "
              f"one-hot {row['mean_one_hot_fraction']:.3f} +/- {row['std_one_hot_fraction']:.3f}, "
              f"all clusters {row['all_clusters_share']:.2f}, collapse rate {row['collapse_rate']:.2f}")
    print(f"Verdicts written to {paths['verdicts.csv']}")
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gaussclust", description="Label-feature image clustering with Gaussian attention")
    parser.add_argument("--version", action="version", version=version)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("train", help="train a model from a JSON run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--dump-targets", action="store_true",
                   help="write every macro-batch's pseudo targets as .npz (debugging)")
    p.set_defaults(func=command_train)

    p = sub.add_parser("eval", help="ACC/NMI/ARI of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="image folder (defaults to the run's dataset)")
    p.add_argument("--batch-size", type=int, default=100)
    p.set_defaults(func=command_eval)

    p = sub.add_parser("visualize", help="scatter maps, cluster gallery and attention overlays")
    p.add_argument("--checkpoint", required=True, nargs="+",
                   help="one or more checkpoints, e.g. successive training stages")
    p.add_argument("--data", help="image folder (defaults to the run's dataset)")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=16, help="number of attention overlays")
    p.add_argument("--batch-size", type=int, default=100)
    p.set_defaults(func=command_visualize)

    p = sub.add_parser("theorem-check", help="optimize free label features and report one-hot/collapse verdicts")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seeds", type=int, default=20, help="number of seeds (0 .. seeds-1)")
    p.add_argument("--regime", choices=(*theoremlab.REGIMES, "both"), default="both")
    p.add_argument("--r-mode", choices=theoremlab.RELATION_MODES, default="ground_truth")
    p.add_argument("--init", choices=theoremlab.INITS, default="random")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--entropy-weight", type=float, default=3.)
    p.add_argument("--out", help="output directory (defaults to a fresh run directory)")
    p.set_defaults(func=command_theorem_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
