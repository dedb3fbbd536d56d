from .flax_nets.clusternet import ClusterNet, ClusterModel, ModelConfig, build_model, forward, inference_assign
from .models.losses import LossWeights, total_loss
from .models.pseudo_targets import compute_pseudo_targets
from .models.trainer import ClusterTrainer, TrainConfig, train, resume, final_inference, repeat_training
from .utils.datasets import DatasetSpec, load_dataset
from .utils.genfunc import make_synthetic_shapes
from .utils.transforms import TransformConfig

from .models import kernels
from .models import theoremlab
from .utils import metrics
from .utils import utils
from .utils import genfunc
from .__version__ import version as __version__

__all__ = [
    "ClusterNet",
    "ClusterModel",
    "ModelConfig",
    "build_model",
    "forward",
    "inference_assign",
    "LossWeights",
    "total_loss",
    "compute_pseudo_targets",
    "ClusterTrainer",
    "TrainConfig",
    "train",
    "resume",
    "final_inference",
    "repeat_training",
    "DatasetSpec",
    "load_dataset",
    "make_synthetic_shapes",
    "TransformConfig",
    "kernels",
    "theoremlab",
    "metrics",
    "utils",
    "genfunc",
]
