"""On-disk dataset format: RGB PNG images, label-map PNG masks and ``manifest.json``.

Layout::

    root/
      manifest.json
      images/0000.png     # RGB, uint8
      masks/0000.png      # single channel, pixel value = class id (0 = background)

``manifest.json``::

    {"version": 1,
     "classes": ["circle", ...],          # class id = position + 1
     "items": [{"image": "images/0000.png", "mask": "masks/0000.png", "classes": [1, 3]}, ...],
     "meta": {...}}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import CorruptManifest, MissingFile, ShapeMismatch

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ManifestItem:
    image: str
    mask: str
    classes: tuple[int, ...]


@dataclass(eq=False)
class DatasetManifest:
    root: Path | None
    classes: tuple[str, ...]
    items: list[ManifestItem]
    meta: dict = field(default_factory=dict)
    _images: list | None = field(default=None, repr=False)
    _labels: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.classes = tuple(self.classes)
        n = len(self.items)
        if self._images is None:
            self._images = [None] * n
        if self._labels is None:
            self._labels = [None] * n

    def __len__(self) -> int:
        return len(self.items)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.to_json() == other.to_json()

    def class_id(self, name: str) -> int:
        try:
            return self.classes.index(name) + 1
        except ValueError:
            raise KeyError(f"class {name!r} not in vocabulary {self.classes}") from None

    def class_name(self, class_id: int) -> str:
        return self.classes[class_id - 1]

    def items_with(self, class_id: int) -> list[int]:
        return [i for i, it in enumerate(self.items) if class_id in it.classes]

    def image_u8(self, i: int) -> np.ndarray:
        if self._images[i] is None:
            self._images[i] = _read_png(self._path(self.items[i].image), "RGB")
        return self._images[i]

    def label(self, i: int) -> np.ndarray:
        if self._labels[i] is None:
            self._labels[i] = _read_png(self._path(self.items[i].mask), "L")
        return self._labels[i]

    def image(self, i: int) -> np.ndarray:
        """``H x W x 3`` float32 image in [0, 1]."""
        return self.image_u8(i).astype(np.float32) / 255.0

    def mask(self, i: int, class_id: int) -> np.ndarray:
        return (self.label(i) == class_id).astype(np.uint8)

    def _path(self, rel: str) -> Path:
        if self.root is None:
            raise MissingFile(f"{rel}: manifest has no root directory and the item is not in memory")
        return self.root / rel

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "classes": list(self.classes),
            "items": [{"image": it.image, "mask": it.mask, "classes": list(it.classes)} for it in self.items],
            "meta": self.meta,
        }

    def write(self, root) -> Path:
        root = Path(root)
        for sub in {os.path.dirname(p) for it in self.items for p in (it.image, it.mask)}:
            (root / sub).mkdir(parents=True, exist_ok=True)
        for i, it in enumerate(self.items):
            # optimize=False and no metadata keep the bytes reproducible
            Image.fromarray(self.image_u8(i), "RGB").save(root / it.image)
            Image.fromarray(self.label(i), "L").save(root / it.mask)
        with open(root / "manifest.json", "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
        self.root = root
        return root


def _read_png(path: Path, mode: str) -> np.ndarray:
    if not path.exists():
        raise MissingFile(f"missing file: {path}")
    with Image.open(path) as im:
        if im.mode != mode:
            im = im.convert(mode)
        return np.array(im)


def load_manifest(root, check_files: bool = True) -> DatasetManifest:
    """Read and validate ``root/manifest.json``; checks files exist and masks align with images."""
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise MissingFile(f"missing file: {path}")
    try:
        with open(path) as f:
            raw = json.load(f)
        if raw.get("version") != MANIFEST_VERSION:
            raise CorruptManifest(f"{path}: unsupported manifest version {raw.get('version')!r}")
        classes = tuple(str(c) for c in raw["classes"])
        items = [
            ManifestItem(str(it["image"]), str(it["mask"]), tuple(int(c) for c in it["classes"]))
            for it in raw["items"]
        ]
        meta = dict(raw.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptManifest):
            raise
        raise CorruptManifest(f"{path}: {exc}") from exc
    for it in items:
        bad = [c for c in it.classes if not 1 <= c <= len(classes)]
        if bad:
            raise CorruptManifest(f"{it.image}: class ids {bad} outside vocabulary of {len(classes)}")
    manifest = DatasetManifest(root=root, classes=classes, items=items, meta=meta)
    if check_files:
        for i, it in enumerate(items):
            for rel in (it.image, it.mask):
                if not (root / rel).exists():
                    raise MissingFile(f"missing file: {root / rel}")
            image, label = manifest.image_u8(i), manifest.label(i)
            if image.shape[:2] != label.shape:
                raise ShapeMismatch(f"{it.mask}: mask {label.shape} does not match image {image.shape[:2]}")
    return manifest
