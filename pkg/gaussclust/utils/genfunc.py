from typing import Callable, Dict, Tuple
from dataclasses import dataclass

import numpy as np

from .datasets import ArrayDataset


# Each generator maps normalized coordinates (x, y), centred on the shape and
# divided by its radius, to a boolean mask.
ShapeFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def disk():
    """Filled circle"""
    def f(x, y):
        return x**2 + y**2 <= 1.
    return f


def square():
    """Axis-aligned filled square"""
    def f(x, y):
        return (np.abs(x) <= 0.8) & (np.abs(y) <= 0.8)
    return f


def triangle():
    """Upward-pointing filled triangle"""
    def f(x, y):
        return (y <= 0.8) & (y >= -0.9 + 2 * np.abs(x))
    return f


def cross():
    """Plus sign"""
    def f(x, y):
        horizontal = (np.abs(y) <= 0.25) & (np.abs(x) <= 1.)
        vertical = (np.abs(x) <= 0.25) & (np.abs(y) <= 1.)
        return horizontal | vertical
    return f


def ring():
    """Annulus"""
    def f(x, y):
        r2 = x**2 + y**2
        return (r2 <= 1.) & (r2 >= 0.45)
    return f


def diamond():
    """Square rotated by 45 degrees"""
    def f(x, y):
        return np.abs(x) + np.abs(y) <= 1.
    return f


def saltire():
    """Diagonal cross"""
    def f(x, y):
        inside = (np.abs(x) <= 1.) & (np.abs(y) <= 1.)
        return inside & ((np.abs(x - y) <= 0.35) | (np.abs(x + y) <= 0.35))
    return f


def bars():
    """Two horizontal bars"""
    def f(x, y):
        return (np.abs(x) <= 0.9) & (np.abs(np.abs(y) - 0.55) <= 0.22)
    return f


SHAPE_GENERATORS: Dict[str, Callable[[], ShapeFn]] = {
    "disk": disk,
    "square": square,
    "triangle": triangle,
    "cross": cross,
    "ring": ring,
    "diamond": diamond,
    "saltire": saltire,
    "bars": bars,
}


@dataclass
class SyntheticShapesSpec:
    """Parameters of make_synthetic_shapes"""
    cluster_count: int = 3
    n_per_class: int = 200
    image_size: Tuple[int, int] = (64, 64)
    seed: int = 0
    grayscale: bool = True
    noise: float = 0.05

    def __post_init__(self):
        self.image_size = tuple(int(s) for s in self.image_size)


def render_shape(shape_fn: ShapeFn, image_size: Tuple[int, int],
                 rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """
    Draws one shape at a random position and scale, with a random colour,
    on a dark noisy background. Returns an (H, W, 3) array in [0, 1].
    """
    height, width = image_size
    side = min(height, width)
    radius = rng.uniform(0.18, 0.32) * side
    cx = rng.uniform(radius, width - radius)
    cy = rng.uniform(radius, height - radius)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = shape_fn((xx - cx) / radius, (cy - yy) / radius)

    background = rng.uniform(0., 0.3, size=3)
    # bright foreground so the shape stays visible after grayscale conversion
    foreground = rng.uniform(0.3, 1., size=3)
    foreground[rng.integers(3)] = 1.
    image = np.where(mask[..., None], foreground, background)
    image = image + noise * rng.standard_normal(image.shape)
    return np.clip(image, 0., 1.).astype(np.float32)


def make_synthetic_shapes(cluster_count: int = 3,
                          n_per_class: int = 200,
                          image_size: Tuple[int, int] = (64, 64),
                          seed: int = 0,
                          grayscale: bool = True,
                          noise: float = 0.05) -> ArrayDataset:
    """
    Generates a balanced dataset of simple shapes; the ground-truth label of
    an image is the id of the shape drawn on it. Deterministic given seed.
    """
    if cluster_count > len(SHAPE_GENERATORS):
        raise ValueError(
            f"Only {len(SHAPE_GENERATORS)} shape generators are available, got cluster_count={cluster_count}")
    if cluster_count < 2:
        raise ValueError(f"cluster_count must be >= 2, got {cluster_count}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be positive, got {n_per_class}")
    if min(image_size) < 8:
        raise ValueError(f"image_size components must be >= 8, got {image_size}")

    rng = np.random.default_rng(seed)
    generators = list(SHAPE_GENERATORS.values())[:cluster_count]
    labels = np.repeat(np.arange(cluster_count), n_per_class)
    rng.shuffle(labels)
    shape_fns = [g() for g in generators]
    images = np.stack([render_shape(shape_fns[c], image_size, rng, noise) for c in labels])
    return ArrayDataset(images, cluster_count, grayscale=grayscale, labels=labels)


def make_dataset_from_spec(spec: SyntheticShapesSpec) -> ArrayDataset:
    return make_synthetic_shapes(
        spec.cluster_count, spec.n_per_class, spec.image_size,
        spec.seed, spec.grayscale, spec.noise)
