from typing import Optional, Sequence
from dataclasses import dataclass
import csv
import os

import numpy as np
from PIL import Image
from matplotlib import colormaps
from matplotlib.figure import Figure
from matplotlib.patches import Circle
from skimage.transform import resize

from .datasets import ImageDataset


@dataclass
class ScatterMap:
    """
    2D embedding of label features for plotting.

    Args:
        points: (N, 2) points inside the unit disk
        colors: optional (N,) ground-truth ids used to colour the points
        acc: optional accuracy shown in the title
        cluster_count: k, the number of vertices of the reference polygon
    """
    points: np.ndarray
    cluster_count: int
    colors: Optional[np.ndarray] = None
    acc: Optional[float] = None


def map_to_2d(l: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """
    Maps label features onto the plane: v = sum_h l_h (sin(2 pi h / k), cos(2 pi h / k)),
    h = 1..k. One-hot features land on the vertices of a regular k-gon inscribed
    in the unit circle, uniform features on the origin.

    Args:
        l: (k,) or (N, k) label features
        k: number of clusters (defaults to the last dimension of l)

    Returns:
        (2,) or (N, 2) array
    """
    l = np.asarray(l, dtype=np.float64)
    k = l.shape[-1] if k is None else k
    if l.shape[-1] != k:
        raise ValueError(f"Label features have {l.shape[-1]} entries, expected k={k}")
    angles = 2 * np.pi * np.arange(1, k + 1) / k
    return np.stack([l @ np.sin(angles), l @ np.cos(angles)], axis=-1)


def scatter_map(label_features: np.ndarray, truth: Optional[np.ndarray] = None,
                acc: Optional[float] = None) -> ScatterMap:
    label_features = np.asarray(label_features)
    return ScatterMap(map_to_2d(label_features), label_features.shape[-1],
                      None if truth is None else np.asarray(truth), acc)


def write_scatter_csv(smap: ScatterMap, path: str) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "color"])
        colors = smap.colors if smap.colors is not None else [""] * len(smap.points)
        for (x, y), c in zip(smap.points, colors):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", c])
    return path


def render_scatter(smap: ScatterMap, path: str, csv_path: Optional[str] = None,
                   title: Optional[str] = None) -> str:
    """Plots the scatter map (with the unit circle and the k-gon vertices) and optionally dumps the points"""
    if csv_path is not None:
        write_scatter_csv(smap, csv_path)
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    ax.add_patch(Circle((0, 0), 1., fill=False, linestyle="--", color="gray", alpha=0.5))
    vertices = map_to_2d(np.eye(smap.cluster_count))
    ax.scatter(vertices[:, 0], vertices[:, 1], marker="x", c="black", s=60)
    colors = {} if smap.colors is None else {"c": smap.colors, "cmap": "tab10"}
    ax.scatter(smap.points[:, 0], smap.points[:, 1], s=8, alpha=0.7, **colors)
    ax.set_xlim(-1.1, 1.1)
    ax.set_ylim(-1.1, 1.1)
    ax.set_aspect("equal")
    label = title or "Label features"
    if smap.acc is not None:
        label += f" (ACC {smap.acc:.3f})"
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return path


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[-1] == 1:
        image = np.repeat(image, 3, axis=-1)
    return np.clip(image, 0., 1.)


def overlay_attention(image: np.ndarray, attention_map: np.ndarray,
                      alpha: float = 0.5, cmap: str = "jet") -> np.ndarray:
    """
    Upsamples the attention map to the image size (bilinear), colours it and
    alpha-blends it over the image. Returns an (H, W, 3) array in [0, 1].
    """
    image = _as_rgb(image)
    height, width = image.shape[:2]
    heat = resize(np.asarray(attention_map, dtype=np.float64), (height, width),
                  order=1, mode="edge", anti_aliasing=False)
    peak = heat.max()
    heat = heat / peak if peak > 0 else heat
    colored = colormaps[cmap](heat)[..., :3]
    return (1. - alpha) * image + alpha * colored


def render_attention_overlay(image: np.ndarray, attention_map: np.ndarray, path: str,
                             alpha: float = 0.5, cmap: str = "jet") -> str:
    """Writes the attention overlay of one image as a PNG of the image's size"""
    blended = overlay_attention(image, attention_map, alpha, cmap)
    Image.fromarray(np.round(blended * 255).astype(np.uint8)).save(path, format="PNG")
    return path


def _tile(images: Sequence[np.ndarray], rows: int, cols: int, pad: int = 2) -> np.ndarray:
    height, width = images[0].shape[:2]
    canvas = np.ones((rows * (height + pad) + pad, cols * (width + pad) + pad, 3))
    for pos, image in enumerate(images):
        r, c = divmod(pos, cols)
        top, left = pad + r * (height + pad), pad + c * (width + pad)
        canvas[top:top + height, left:left + width] = _as_rgb(image)
    return canvas


def render_cluster_gallery(dataset: ImageDataset, ids: np.ndarray, confidences: np.ndarray,
                           path: str, per_cluster: int = 8) -> str:
    """
    One column per cluster, the most confident members at the top.
    Empty clusters leave blank columns.
    """
    ids = np.asarray(ids)
    confidences = np.asarray(confidences)
    if len(ids) != len(dataset) or len(confidences) != len(dataset):
        raise ValueError("ids and confidences must have one entry per dataset sample")
    k = dataset.cluster_count
    cells = [None] * (per_cluster * k)
    for h in range(k):
        members = np.flatnonzero(ids == h)
        if len(members) == 0:
            continue
        top = members[np.argsort(-confidences[members], kind="stable")[:per_cluster]]
        images = dataset.get_batch(top, keep_color=True).samples
        for row, image in enumerate(images):
            cells[row * k + h] = image
    filled = [c for c in cells if c is not None]
    if not filled:
        raise ValueError("No samples to show")
    cells = [c if c is not None else np.ones_like(filled[0]) for c in cells]
    canvas = _tile(cells, per_cluster, k)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(np.round(canvas * 255).astype(np.uint8)).save(path, format="PNG")
    return path
