from typing import Tuple
from dataclasses import dataclass, replace

import numpy as np
from skimage import color, transform

from .datasets import ImageBatch, to_grayscale
from .utils import seeded_rng


@dataclass
class TransformConfig:
    """
    Ranges of the stochastic transformation used by the transformation-invariance task.
    Every draw includes the identity in its support.

    Args:
        flip_prob: probability of a horizontal flip
        rotation: max absolute rotation, degrees
        translate: max absolute shift as a fraction of image size
        scale: (min, max) isotropic zoom
        shear: max absolute shear, degrees
        brightness, contrast, saturation: jitter factor drawn from [max(0, 1 - v), 1 + v]
        hue: hue shift drawn from [-hue, hue], in turns (<= 0.5)
        grayscale: convert to one channel after colour jitter
    """
    flip_prob: float = 0.5
    rotation: float = 10.
    translate: float = 0.1
    scale: Tuple[float, float] = (0.9, 1.1)
    shear: float = 5.
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.125
    grayscale: bool = False

    def __post_init__(self):
        self.scale = tuple(float(s) for s in self.scale)
        ranges = (self.flip_prob, self.rotation, self.translate, self.shear,
                  self.brightness, self.contrast, self.saturation, self.hue)
        if min(ranges) < 0 or min(self.scale) <= 0:
            raise ValueError("Transform ranges must be nonnegative and scale positive")
        if self.flip_prob > 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not self.scale[0] <= 1. <= self.scale[1]:
            raise ValueError(f"scale range {self.scale} must contain 1")
        if self.hue > 0.5:
            raise ValueError(f"hue must be <= 0.5, got {self.hue}")

    @classmethod
    def identity(cls, grayscale: bool = False) -> "TransformConfig":
        return cls(0., 0., 0., (1., 1.), 0., 0., 0., 0., 0., grayscale)


def _factor(rng: np.random.Generator, spread: float) -> float:
    return rng.uniform(max(0., 1. - spread), 1. + spread) if spread > 0 else 1.


def _affine(image: np.ndarray, cfg: TransformConfig, rng: np.random.Generator) -> np.ndarray:
    height, width = image.shape[:2]
    angle = np.deg2rad(rng.uniform(-cfg.rotation, cfg.rotation)) if cfg.rotation > 0 else 0.
    shear = np.deg2rad(rng.uniform(-cfg.shear, cfg.shear)) if cfg.shear > 0 else 0.
    zoom = rng.uniform(*cfg.scale) if cfg.scale[0] != cfg.scale[1] else cfg.scale[0]
    if cfg.translate > 0:
        shift = rng.uniform(-cfg.translate, cfg.translate, size=2) * (width, height)
    else:
        shift = np.zeros(2)
    if angle == 0. and shear == 0. and zoom == 1. and not shift.any():
        return image
    center = np.array([(width - 1) / 2., (height - 1) / 2.])
    to_origin = transform.AffineTransform(translation=-center)
    warp = transform.AffineTransform(scale=(zoom, zoom), rotation=angle, shear=shear)
    back = transform.AffineTransform(translation=center + shift)
    tform = to_origin + warp + back
    out = transform.warp(image, tform.inverse, order=1, mode='edge', preserve_range=True)
    return np.clip(out, 0., 1.)


def _jitter(image: np.ndarray, cfg: TransformConfig, rng: np.random.Generator) -> np.ndarray:
    b = _factor(rng, cfg.brightness)
    c = _factor(rng, cfg.contrast)
    s = _factor(rng, cfg.saturation)
    h = rng.uniform(-cfg.hue, cfg.hue) if cfg.hue > 0 else 0.
    rgb = image.shape[-1] == 3
    if b != 1.:
        image = np.clip(image * b, 0., 1.)
    if c != 1.:
        mean = to_grayscale(image).mean()
        image = np.clip((image - mean) * c + mean, 0., 1.)
    if rgb and s != 1.:
        gray = to_grayscale(image)
        image = np.clip((image - gray) * s + gray, 0., 1.)
    if rgb and h != 0.:
        hsv = color.rgb2hsv(image)
        hsv[..., 0] = (hsv[..., 0] + h) % 1.
        image = np.clip(color.hsv2rgb(hsv), 0., 1.)
    return image


def transform_image(image: np.ndarray, cfg: TransformConfig, rng: np.random.Generator) -> np.ndarray:
    """Flip, affine warp, colour jitter, then (optionally) grayscale, for one (H, W, C) image"""
    if cfg.flip_prob > 0 and rng.uniform() < cfg.flip_prob:
        image = image[:, ::-1]
    image = _affine(image, cfg, rng)
    image = _jitter(image, cfg, rng)
    if cfg.grayscale:
        image = to_grayscale(image)
    return np.ascontiguousarray(image, dtype=np.float32)


def random_transform(batch: ImageBatch, cfg: TransformConfig, seed: int) -> ImageBatch:
    """
    Applies an independent random transformation to every sample of the batch.
    Draws are keyed by (seed, sample index), so a sample receives the same
    transformation whichever batch it is processed in.
    """
    if len(batch) == 0:
        raise ValueError("Cannot transform an empty batch")
    samples = np.stack([
        transform_image(image, cfg, seeded_rng(seed, idx))
        for image, idx in zip(batch.samples, batch.indices)
    ])
    return ImageBatch(samples, batch.indices)


def with_grayscale(cfg: TransformConfig, grayscale: bool) -> TransformConfig:
    return replace(cfg, grayscale=grayscale)
