"""Simulated visual-reference annotations (point, scribble, box, mask) drawn from a GT mask."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .errors import EmptyMask, InsufficientForeground, KOutOfRange

KINDS = ("point", "scribble", "box", "mask")
MIN_COUNT, MAX_COUNT = 1, 20


@dataclass(frozen=True)
class ScribbleParams:
    """Random-walk brush constants, sized for 64x64 images."""

    min_radius: int = 1
    max_radius: int = 3
    max_turn_deg: float = 45.0
    min_steps: int = 8
    max_steps: int = 24
    step_px: float = 2.0


DEFAULT_SCRIBBLE = ScribbleParams()


@dataclass(frozen=True)
class BoxSpec:
    """Inclusive pixel bounds of an axis-aligned box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def area(self) -> int:
        return (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)

    def as_list(self) -> list[int]:
        return [self.row_min, self.col_min, self.row_max, self.col_max]


@dataclass(frozen=True, eq=False)
class Annotation:
    kind: str
    raster: np.ndarray
    source_class: int | None = None
    seed: int | None = None
    k: int | None = None
    box: BoxSpec | None = None

    def sidecar(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "seed": self.seed,
            "source_class": self.source_class,
            "box": self.box.as_list() if self.box is not None else None,
        }


def _check_gt(gt) -> np.ndarray:
    gt = np.asarray(gt)
    if gt.ndim != 2:
        raise ValueError(f"gt must be 2-D, got shape {gt.shape}")
    gt = (gt > 0).astype(np.uint8)
    if not gt.any():
        raise EmptyMask("ground-truth mask is empty")
    return gt


def _check_count(k: int, what: str) -> None:
    if not MIN_COUNT <= k <= MAX_COUNT:
        raise KOutOfRange(f"{what} must be in [{MIN_COUNT}, {MAX_COUNT}], got {k}")


def sample_points(gt, k: int, seed: int, source_class: int | None = None) -> Annotation:
    gt = _check_gt(gt)
    _check_count(k, "point count")
    fg = np.flatnonzero(gt)
    if k > fg.size:
        raise InsufficientForeground(f"asked for {k} points but mask has {fg.size} foreground pixels")
    rng = np.random.default_rng(seed)
    picked = rng.choice(fg, size=k, replace=False)
    raster = np.zeros_like(gt)
    raster.flat[picked] = 1
    return Annotation("point", raster, source_class, seed, k=k)


def _stroke(draw: ImageDraw.ImageDraw, start, rng, params: ScribbleParams, shape) -> None:
    h, w = shape
    y, x = float(start[0]), float(start[1])
    angle = rng.uniform(0.0, 2 * math.pi)
    radius = int(rng.integers(params.min_radius, params.max_radius + 1))
    steps = int(rng.integers(params.min_steps, params.max_steps + 1))
    max_turn = math.radians(params.max_turn_deg)
    points = [(x, y)]
    for _ in range(steps):
        angle += rng.uniform(-max_turn, max_turn)
        x = min(max(x + params.step_px * math.cos(angle), 0.0), w - 1.0)
        y = min(max(y + params.step_px * math.sin(angle), 0.0), h - 1.0)
        points.append((x, y))
    draw.line(points, fill=1, width=2 * radius + 1, joint="curve")
    for px, py in (points[0], points[-1]):
        draw.ellipse((px - radius, py - radius, px + radius, py + radius), fill=1)


def sample_scribble(
    gt,
    n_strokes: int,
    seed: int,
    source_class: int | None = None,
    params: ScribbleParams = DEFAULT_SCRIBBLE,
) -> Annotation:
    """Union of ``n_strokes`` random-walk brush strokes, clipped to the object."""
    gt = _check_gt(gt)
    _check_count(n_strokes, "stroke count")
    rng = np.random.default_rng(seed)
    fg = np.argwhere(gt)
    canvas = Image.new("L", (gt.shape[1], gt.shape[0]), 0)
    draw = ImageDraw.Draw(canvas)
    starts = []
    for _ in range(n_strokes):
        start = fg[rng.integers(fg.shape[0])]
        starts.append(start)
        _stroke(draw, start, rng, params, gt.shape)
    raster = (np.asarray(canvas) > 0).astype(np.uint8) & gt
    if not raster.any():
        raster[tuple(starts[0])] = 1
    return Annotation("scribble", raster, source_class, seed, k=n_strokes)


def bounding_box(mask) -> BoxSpec:
    mask = _check_gt(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BoxSpec(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def box_raster(box: BoxSpec, shape) -> np.ndarray:
    raster = np.zeros(shape, dtype=np.uint8)
    raster[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1] = 1
    return raster


def extract_box(gt, source_class: int | None = None) -> tuple[BoxSpec, Annotation]:
    gt = _check_gt(gt)
    box = bounding_box(gt)
    return box, Annotation("box", box_raster(box, gt.shape), source_class, box=box)


def mask_annotation(gt, source_class: int | None = None) -> Annotation:
    if isinstance(gt, Annotation):
        return Annotation("mask", gt.raster.copy(), gt.source_class if source_class is None else source_class)
    gt = _check_gt(gt)
    return Annotation("mask", gt.copy(), source_class)


def simulate(kind: str, gt, seed: int, source_class: int | None = None) -> Annotation:
    """Draw one annotation of ``kind`` the way training and evaluation do.

    Point and scribble counts are drawn uniformly from [1, 20] (points capped at
    the foreground size).
    """
    if kind == "mask":
        return mask_annotation(gt, source_class)
    if kind == "box":
        return extract_box(gt, source_class)[1]
    gt = _check_gt(gt)
    rng = np.random.default_rng(seed)
    k = int(rng.integers(MIN_COUNT, MAX_COUNT + 1))
    sub_seed = int(rng.integers(2**31))
    if kind == "point":
        return sample_points(gt, min(k, int(gt.sum())), sub_seed, source_class)
    if kind == "scribble":
        return sample_scribble(gt, k, sub_seed, source_class)
    raise ValueError(f"unknown annotation kind {kind!r}; expected one of {KINDS}")
