"""Procedurally rendered shape dataset standing in for COCO/PASCAL at desk scale.

Each image holds one to ``max_shapes`` shapes of distinct classes. Masks are the
analytic shape regions; the image is painted from the label map, so every mask
covers exactly the pixels of its rendered shape. Each class owns a hue band,
which keeps classes separable for a frozen, untrained encoder.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from ..errors import BadConfig
from .folds import SYNTH_CLASSES
from .manifest import DatasetManifest, ManifestItem

STYLES = ("flat", "texture")


@dataclass
class SynthConfig:
    size: int = 64
    n_images: int = 240
    classes: tuple[str, ...] = SYNTH_CLASSES
    max_shapes: int = 2
    style: str = "texture"
    min_radius: float = 9.0
    max_radius: float = 15.0
    min_area: int = 40
    noise: float = 0.05
    hue_jitter: float = 0.5

    def validate(self) -> None:
        self.classes = tuple(self.classes)
        if len(self.classes) < 6:
            raise BadConfig(f"need at least 6 shape classes, got {len(self.classes)}")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise BadConfig(f"unknown shape classes {unknown}; available: {sorted(SHAPES)}")
        if len(set(self.classes)) != len(self.classes):
            raise BadConfig("duplicate shape classes")
        if self.size < 16 or self.size % 16:
            raise BadConfig(f"size must be a positive multiple of 16, got {self.size}")
        if self.style not in STYLES:
            raise BadConfig(f"style must be one of {STYLES}")
        if not 1 <= self.max_shapes <= len(self.classes):
            raise BadConfig("max_shapes must be between 1 and the number of classes")
        if self.n_images < 1:
            raise BadConfig("n_images must be positive")


def _rotated(yy, xx, cy, cx, theta):
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    return c * dx + s * dy, -s * dx + c * dy


def _circle(u, v, r):
    return u * u + v * v <= r * r


def _square(u, v, r):
    s = r * 0.8
    return (np.abs(u) <= s) & (np.abs(v) <= s)


def _triangle(u, v, r):
    inside = np.ones(u.shape, dtype=bool)
    for k in range(3):
        a = np.pi / 2 + k * 2 * np.pi / 3
        inside &= u * np.cos(a) + v * np.sin(a) <= r * 0.5
    return inside


def _cross(u, v, r):
    t = r / 3
    return ((np.abs(u) <= r) & (np.abs(v) <= t)) | ((np.abs(v) <= r) & (np.abs(u) <= t))


def _ring(u, v, r):
    d2 = u * u + v * v
    return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)


def _stripe(u, v, r):
    return (np.abs(u) <= 1.3 * r) & (np.abs(v) <= 0.3 * r)


SHAPES = {
    "circle": _circle,
    "square": _square,
    "triangle": _triangle,
    "cross": _cross,
    "ring": _ring,
    "stripe": _stripe,
}


def shape_mask(name: str, size: int, cy: float, cx: float, r: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    u, v = _rotated(yy, xx, cy, cx, theta)
    return SHAPES[name](u, v, r)


def hue_slot(class_index: int, n_classes: int) -> int:
    """Hue band of a class; consecutive classes sit half a circle apart so held-out pairs interleave."""
    half = (n_classes + 1) // 2
    return (class_index // 2) + (class_index % 2) * half


def class_color(class_index: int, n_classes: int, rng, hue_jitter: float = 0.5) -> np.ndarray:
    # hue_jitter is a fraction of the band width; 0.5 tiles the hue circle without gaps
    width = 1.0 / n_classes
    hue = (hue_slot(class_index, n_classes) + rng.uniform(-hue_jitter, hue_jitter)) * width % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)))


def render_image(config: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """One image: ``(uint8 H x W x 3, uint8 label map, sorted class ids present)``."""
    size = config.size
    n = int(rng.integers(1, config.max_shapes + 1))
    while True:
        picked = rng.choice(len(config.classes), size=n, replace=False)
        label = np.zeros((size, size), dtype=np.uint8)
        for ci in picked:
            r = rng.uniform(config.min_radius, config.max_radius)
            cy, cx = rng.uniform(r * 0.6, size - r * 0.6, size=2)
            region = shape_mask(config.classes[ci], size, cy, cx, r, rng.uniform(0, 2 * np.pi))
            label[region] = ci + 1
        areas = [(label == ci + 1).sum() for ci in picked]
        if min(areas) >= config.min_area:
            break
    grey = rng.uniform(0.2, 0.5)
    image = np.empty((size, size, 3))
    image[:] = grey * np.array([1.0, 1.0, 1.0]) + rng.uniform(-0.05, 0.05, size=3)
    for ci in picked:
        image[label == ci + 1] = class_color(int(ci), len(config.classes), rng, config.hue_jitter)
    if config.style == "texture":
        image = image + rng.normal(0.0, config.noise, size=image.shape)
    image = np.clip(np.round(image * 255), 0, 255).astype(np.uint8)
    return image, label, sorted(int(ci) + 1 for ci in picked)


def synth_dataset(config: SynthConfig | None = None, seed: int = 0) -> DatasetManifest:
    config = config or SynthConfig()
    config.validate()
    items, images, labels = [], [], []
    for i in range(config.n_images):
        rng = np.random.default_rng([seed, i])
        image, label, present = render_image(config, rng)
        items.append(ManifestItem(f"images/{i:04d}.png", f"masks/{i:04d}.png", tuple(present)))
        images.append(image)
        labels.append(label)
    meta = {
        "generator": "synthetic",
        "seed": seed,
        "style": config.style,
        "size": config.size,
        "n_images": config.n_images,
        "max_shapes": config.max_shapes,
    }
    return DatasetManifest(
        root=None, classes=tuple(config.classes), items=items, meta=meta, _images=images, _labels=labels
    )
