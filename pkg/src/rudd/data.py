"""Procedural toy image datasets and PNG folder I/O.

Randomness comes from numpy's Philox generator (a 64-bit counter-based
PRNG), so a seed yields the same images on every platform.
"""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["SHAPE_FAMILIES", "COLOR_VARIANTS", "LabeledImageSet", "generate_toy", "load_images", "export_images"]

SHAPE_FAMILIES = ("hbar", "disk", "cross", "ring", "vbar", "square", "triangle", "diagonal")
COLOR_VARIANTS = 4


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (N, H, W, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = "train"
    seed: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be N x H x W x 3, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if len(counts) != self.num_classes or (counts == 0).any():
            raise ValueError("every class needs at least one sample")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def _mask(family: str, u: np.ndarray, v: np.ndarray, size: float, soft: float) -> np.ndarray:
    def inside(d):
        # d < 0 inside; smooth edge one pixel wide
        return np.clip(0.5 - d / soft, 0.0, 1.0)

    t = 0.35 * size
    if family == "hbar":
        return inside(np.maximum(np.abs(u) - size, np.abs(v) - t))
    if family == "vbar":
        return inside(np.maximum(np.abs(v) - size, np.abs(u) - t))
    if family == "disk":
        return inside(np.hypot(u, v) - size)
    if family == "ring":
        return inside(np.abs(np.hypot(u, v) - 0.75 * size) - 0.25 * size)
    if family == "cross":
        a = np.maximum(np.abs(u) - size, np.abs(v) - 0.5 * t)
        b = np.maximum(np.abs(v) - size, np.abs(u) - 0.5 * t)
        return inside(np.minimum(a, b))
    if family == "square":
        return inside(np.abs(np.maximum(np.abs(u), np.abs(v)) - 0.8 * size) - 0.22 * size)
    if family == "triangle":
        return inside(np.maximum(np.abs(u) * 1.7 + v - size, -v - 0.6 * size))
    if family == "diagonal":
        return inside(np.maximum(np.abs(u - v) / np.sqrt(2) - 0.5 * t, np.abs(u + v) / np.sqrt(2) - size))
    raise ValueError(family)


def generate_toy(
    num_classes: int,
    per_class: int,
    height: int = 16,
    width: int = 16,
    seed: int = 0,
    noise: float = 0.05,
    jitter: bool = True,
    split: str = "train",
) -> LabeledImageSet:
    """Render ``per_class`` images of each shape/color class.

    Class ``k`` draws shape family ``k % F`` in hue family ``k % F`` shifted by
    color variant ``k // F``; position, size and color are jittered per image
    and Gaussian pixel noise is added.
    """
    f = len(SHAPE_FAMILIES)
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if num_classes > f * COLOR_VARIANTS:
        raise ValueError(f"at most {f * COLOR_VARIANTS} toy classes available")
    rng = np.random.Generator(np.random.Philox(seed))
    ys, xs = np.meshgrid(
        (np.arange(height) + 0.5) / height * 2 - 1,
        (np.arange(width) + 0.5) / width * 2 - 1,
        indexing="ij",
    )
    soft = 2.0 / min(height, width)
    images = np.empty((num_classes * per_class, height, width, 3), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes), per_class)
    for n, k in enumerate(labels):
        family = SHAPE_FAMILIES[k % f]
        base_hue = (k % f) / f + (k // f) / (f * COLOR_VARIANTS)
        if jitter:
            cy, cx = rng.uniform(-0.25, 0.25, size=2)
            size = rng.uniform(0.45, 0.7)
            hue = base_hue + rng.uniform(-0.02, 0.02)
            sat, val = rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0)
            bg = rng.uniform(0.05, 0.2)
        else:
            cy = cx = 0.0
            size, hue, sat, val, bg = 0.6, base_hue, 0.85, 0.85, 0.12
        color = np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val))
        m = _mask(family, xs - cx, ys - cy, size, soft)[..., None]
        img = bg * (1 - m) + color * m
        if noise > 0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        images[n] = np.clip(img, 0.0, 1.0)
    return LabeledImageSet(images, labels, num_classes, split, seed)


def load_images(directory: str | os.PathLike) -> LabeledImageSet:
    """Read ``directory/<class>/*.png``; classes are subdirectories in sorted order."""
    root = Path(directory)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 1:
        raise ValueError(f"no class subdirectories in {root}")
    images, labels = [], []
    shape = None
    for k, d in enumerate(class_dirs):
        files = sorted(d.glob("*.png"))
        if not files:
            raise ValueError(f"class directory {d} has no PNG files")
        for fp in files:
            try:
                with Image.open(fp) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except OSError as exc:
                raise ValueError(f"cannot read {fp}: {exc}") from exc
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError(f"{fp} is {arr.shape[:2]}, expected {shape[:2]}")
            images.append(arr)
            labels.append(k)
    return LabeledImageSet(np.stack(images), np.array(labels), len(class_dirs))


def export_images(dataset: LabeledImageSet, directory: str | os.PathLike) -> None:
    root = Path(directory)
    for k in range(dataset.num_classes):
        (root / f"class_{k:03d}").mkdir(parents=True, exist_ok=True)
    for i, (img, y) in enumerate(zip(dataset.images, dataset.labels)):
        px = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(px, "RGB").save(root / f"class_{y:03d}" / f"{i:05d}.png")
