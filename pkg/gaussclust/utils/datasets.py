from typing import Dict, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field
import os
import warnings

import numpy as np
from PIL import Image
from skimage import color


IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp')
MANIFEST_NAME = 'labels.csv'


@dataclass
class DatasetSpec:
    """
    Description of an on-disk image dataset.

    Args:
        root_path: directory with one sub-folder per class, or any folder tree of
            images plus an optional 'labels.csv' manifest ("relative_path,label" lines)
        image_size: (height, width) every image is resized to
        grayscale: convert images to a single channel before they reach the network
        cluster_count: number of clusters k
        has_ground_truth: whether class labels are available for evaluation
    """
    root_path: str = ''
    image_size: Tuple[int, int] = (96, 96)
    grayscale: bool = True
    cluster_count: int = 10
    has_ground_truth: bool = True

    def __post_init__(self):
        self.image_size = tuple(int(s) for s in self.image_size)
        if len(self.image_size) != 2 or min(self.image_size) < 8:
            raise ValueError(f"image_size components must be >= 8, got {self.image_size}")
        if self.cluster_count < 2:
            raise ValueError(f"cluster_count must be >= 2, got {self.cluster_count}")


@dataclass
class ImageBatch:
    """
    A batch of images with values in [0, 1].

    Args:
        samples: float32 array of shape (count, height, width, channels)
        indices: ids of the samples in their dataset
    """
    samples: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.samples.ndim != 4 or self.samples.shape[-1] not in (1, 3):
            raise ValueError(f"samples must be (count, height, width, 1|3), got {self.samples.shape}")
        if len(self.samples) != len(self.indices):
            raise ValueError("samples and indices have different lengths")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("indices within a batch must be unique")

    def __len__(self) -> int:
        return len(self.indices)

    def take(self, positions: Union[slice, Sequence[int], np.ndarray]) -> "ImageBatch":
        return ImageBatch(self.samples[positions], self.indices[positions])


def to_grayscale(samples: np.ndarray) -> np.ndarray:
    """(..., H, W, 3) -> (..., H, W, 1) luminance; single-channel input is returned as is"""
    if samples.shape[-1] == 1:
        return samples
    return color.rgb2gray(samples)[..., None].astype(np.float32)


class ImageDataset:
    """
    Indexable image collection. Images are served in batches through get_batch,
    which also tracks the largest number of images decoded in a single request.
    Ground-truth labels are kept private; read them through
    gaussclust.utils.metrics.dataset_ground_truth.
    """

    def __init__(self,
                 image_size: Tuple[int, int],
                 cluster_count: int,
                 source_channels: int,
                 grayscale: bool = True,
                 labels: Optional[np.ndarray] = None) -> None:
        self.image_size = tuple(image_size)
        self.cluster_count = cluster_count
        self.source_channels = source_channels
        self.grayscale = grayscale
        self._labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.peak_decoded = 0

    def __len__(self) -> int:
        raise NotImplementedError

    @property
    def channels(self) -> int:
        """Number of channels the network sees"""
        return 1 if self.grayscale else self.source_channels

    @property
    def has_ground_truth(self) -> bool:
        return self._labels is not None

    def _decode(self, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def get_batch(self, indices: Sequence[int], keep_color: bool = False) -> ImageBatch:
        """
        Decodes the requested samples.

        Args:
            indices: sample ids
            keep_color: return source colours even for grayscale datasets,
                so that colour jitter can run before the grayscale conversion
        """
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) == 0:
            raise ValueError("Requested an empty batch")
        if indices.min() < 0 or indices.max() >= len(self):
            raise ValueError(f"Sample index out of range [0, {len(self)})")
        self.peak_decoded = max(self.peak_decoded, len(indices))
        samples = self._decode(indices)
        if self.grayscale and not keep_color:
            samples = to_grayscale(samples)
        return ImageBatch(samples, indices)

    def reset_counters(self) -> None:
        self.peak_decoded = 0


class ArrayDataset(ImageDataset):
    """Dataset backed by an in-memory (N, H, W, C) array"""

    def __init__(self,
                 images: np.ndarray,
                 cluster_count: int,
                 grayscale: bool = True,
                 labels: Optional[np.ndarray] = None) -> None:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[-1] not in (1, 3):
            raise ValueError(f"images must be (N, H, W, 1|3), got {images.shape}")
        if len(images) == 0:
            raise ValueError("no samples found")
        super().__init__(images.shape[1:3], cluster_count, images.shape[-1], grayscale, labels)
        self.images = images

    def __len__(self) -> int:
        return len(self.images)

    def _decode(self, indices: np.ndarray) -> np.ndarray:
        return self.images[indices]


class FolderDataset(ImageDataset):
    """Dataset of image files decoded lazily with Pillow and resized bilinearly"""

    def __init__(self,
                 files: List[str],
                 image_size: Tuple[int, int],
                 cluster_count: int,
                 grayscale: bool = True,
                 labels: Optional[np.ndarray] = None,
                 class_names: Optional[List[str]] = None) -> None:
        source_channels = 3 if any(_is_color(f) for f in files[:16]) else 1
        super().__init__(image_size, cluster_count, source_channels, grayscale, labels)
        self.files = files
        self.class_names = class_names

    def __len__(self) -> int:
        return len(self.files)

    def _decode(self, indices: np.ndarray) -> np.ndarray:
        return np.stack([self._read(self.files[i]) for i in indices])

    def _read(self, path: str) -> np.ndarray:
        mode = 'RGB' if self.source_channels == 3 else 'L'
        height, width = self.image_size
        try:
            with Image.open(path) as img:
                img = img.convert(mode).resize((width, height), Image.BILINEAR)
                arr = np.asarray(img, dtype=np.float32) / 255.
        except (OSError, ValueError) as e:
            raise ValueError(f"Cannot decode image {path}: {e}") from e
        return arr if arr.ndim == 3 else arr[..., None]


def _is_color(path: str) -> bool:
    try:
        with Image.open(path) as img:
            return img.mode not in ('L', 'LA', '1', 'I', 'I;16', 'F')
    except OSError as e:
        raise ValueError(f"Cannot decode image {path}: {e}") from e


def _scan_images(root: str) -> List[str]:
    files = []
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            if name.lower().endswith(IMAGE_EXTENSIONS):
                files.append(os.path.join(dirpath, name))
    return sorted(files)


def _read_manifest(root: str) -> Tuple[List[str], np.ndarray]:
    files, labels = [], []
    with open(os.path.join(root, MANIFEST_NAME)) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rel_path, label = line.rsplit(',', 1)
                labels.append(int(label))
            except ValueError:
                raise ValueError(f"{MANIFEST_NAME}:{line_no}: expected 'relative_path,label', got '{line}'")
            files.append(os.path.join(root, rel_path))
    return files, np.asarray(labels, dtype=np.int64)


def has_label_source(root: str) -> bool:
    """True if root holds a labels manifest or class sub-folders"""
    if os.path.isfile(os.path.join(root, MANIFEST_NAME)):
        return True
    return any(os.path.isdir(os.path.join(root, d)) for d in os.listdir(root))


def load_dataset(spec: DatasetSpec) -> FolderDataset:
    """
    Loads an image dataset described by spec. Class folders take precedence,
    then a 'labels.csv' manifest; without either, every image under root_path
    is used and ground truth is unavailable.
    """
    root = spec.root_path
    if not os.path.isdir(root):
        raise FileNotFoundError(f"Dataset path does not exist: {root}")

    labels: Optional[np.ndarray] = None
    class_names: Optional[List[str]] = None
    subdirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if spec.has_ground_truth and os.path.isfile(os.path.join(root, MANIFEST_NAME)):
        files, labels = _read_manifest(root)
    elif spec.has_ground_truth and subdirs:
        files, label_list = [], []
        for class_id, name in enumerate(subdirs):
            class_files = _scan_images(os.path.join(root, name))
            files.extend(class_files)
            label_list.extend([class_id] * len(class_files))
        labels = np.asarray(label_list, dtype=np.int64)
        class_names = subdirs
    elif spec.has_ground_truth:
        raise ValueError(f"Ground truth requested but {root} has neither class folders nor {MANIFEST_NAME}")
    else:
        files = _scan_images(root)

    if not files:
        raise ValueError(f"no samples found in {root}")
    if labels is not None:
        n_classes = len(np.unique(labels))
        if n_classes != spec.cluster_count:
            warnings.warn(
                f"Dataset has {n_classes} classes but cluster_count is {spec.cluster_count}",
                stacklevel=2)

    return FolderDataset(
        files, spec.image_size, spec.cluster_count,
        grayscale=spec.grayscale, labels=labels, class_names=class_names)


@dataclass
class BatchView:
    """
    Lazy macro-batch: a dataset plus the sample ids that belong to it.
    Images are decoded only when a slice is materialized.
    """
    dataset: ImageDataset
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.indices)

    def materialize(self, positions: Union[slice, np.ndarray], keep_color: bool = False) -> ImageBatch:
        return self.dataset.get_batch(self.indices[positions], keep_color=keep_color)


def dataset_summary(dataset: ImageDataset) -> Dict[str, object]:
    return {
        "samples": len(dataset),
        "image_size": list(dataset.image_size),
        "channels": dataset.channels,
        "cluster_count": dataset.cluster_count,
        "has_ground_truth": dataset.has_ground_truth,
    }
