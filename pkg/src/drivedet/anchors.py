"""Dense multi-scale anchor grids over a feature pyramid.

Level ``l`` has stride ``2**l`` px; its grid is ``ceil(H / 2**l) x
ceil(W / 2**l)``. One anchor set is planted at every grid position,
centered at ``((i + 0.5) * stride, (j + 0.5) * stride)``. The anchor base
edge is ``base_size_multiplier * stride``; each (aspect, octave) pair
shapes it area-preservingly with aspect ratio = height / width.

Anchors are not clipped at generation; clipping happens at decode time.
Flattened anchor order is level-major, then row-major grid position, then
(aspect, octave) template order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .geometry import Box

MIN_PYRAMID_LEVEL = 2
MAX_PYRAMID_LEVEL = 7


@dataclass(frozen=True)
class AnchorSpec:
    """Per-location anchor template configuration."""

    aspect_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    octave_scales: Tuple[float, ...] = (1.0,)
    base_size_multiplier: float = 4.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "aspect_ratios", tuple(float(a) for a in self.aspect_ratios))
        object.__setattr__(self, "octave_scales", tuple(float(s) for s in self.octave_scales))
        if not self.aspect_ratios or any(a <= 0 for a in self.aspect_ratios):
            raise ValueError("aspect_ratios must be non-empty and strictly positive")
        if not self.octave_scales or any(s <= 0 for s in self.octave_scales):
            raise ValueError("octave_scales must be non-empty and strictly positive")
        if self.base_size_multiplier <= 0:
            raise ValueError("base_size_multiplier must be positive")

    @property
    def anchors_per_location(self) -> int:
        return len(self.aspect_ratios) * len(self.octave_scales)


# RPN-style default: 3 aspects, single octave.
RPN_ANCHOR_SPEC = AnchorSpec()
# One-stage default: 3 aspects x 3 intra-level octaves.
ONE_STAGE_ANCHOR_SPEC = AnchorSpec(octave_scales=(1.0, 2 ** (1.0 / 3.0), 2 ** (2.0 / 3.0)))


@dataclass(frozen=True)
class AnchorLevel:
    level: int
    stride: int
    grid_h: int
    grid_w: int
    boxes: np.ndarray = field(repr=False)  # (grid_h * grid_w * A, 4)

    @property
    def num_positions(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def num_anchors(self) -> int:
        return int(self.boxes.shape[0])


@dataclass(frozen=True)
class AnchorPyramid:
    image_h: float
    image_w: float
    spec: AnchorSpec
    levels: Tuple[AnchorLevel, ...]

    @property
    def total_positions(self) -> int:
        return sum(lv.num_positions for lv in self.levels)

    @property
    def total_anchors(self) -> int:
        return sum(lv.num_anchors for lv in self.levels)

    def all_boxes(self) -> np.ndarray:
        """All anchors concatenated in the documented flattened order."""
        if not self.levels:
            return np.zeros((0, 4), dtype=np.float64)
        return np.concatenate([lv.boxes for lv in self.levels], axis=0)

    def per_level_counts(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((lv.level, lv.num_anchors) for lv in self.levels)


def _level_templates(stride: int, spec: AnchorSpec) -> np.ndarray:
    """(A, 4) anchor offsets around a zero center, order (aspect, octave)."""
    rows = []
    base = spec.base_size_multiplier * stride
    for ar in spec.aspect_ratios:
        for octave in spec.octave_scales:
            edge = base * octave
            h = edge * math.sqrt(ar)
            w = edge / math.sqrt(ar)
            rows.append((-0.5 * h, -0.5 * w, 0.5 * h, 0.5 * w))
    return np.array(rows, dtype=np.float64)


def generate_pyramid(
    image_h: float,
    image_w: float,
    min_level: int = 2,
    max_level: int = 6,
    spec: AnchorSpec = RPN_ANCHOR_SPEC,
) -> AnchorPyramid:
    """Generate one anchor grid per level in ``[min_level, max_level]``."""
    if image_h <= 0 or image_w <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_h}x{image_w}")
    if not (MIN_PYRAMID_LEVEL <= min_level <= max_level <= MAX_PYRAMID_LEVEL):
        raise ValueError(
            f"level range must satisfy {MIN_PYRAMID_LEVEL} <= min <= max <= "
            f"{MAX_PYRAMID_LEVEL}, got [{min_level}, {max_level}]"
        )
    levels = []
    for level in range(min_level, max_level + 1):
        stride = 2 ** level
        grid_h = int(math.ceil(image_h / stride))
        grid_w = int(math.ceil(image_w / stride))
        cy = (np.arange(grid_h, dtype=np.float64) + 0.5) * stride
        cx = (np.arange(grid_w, dtype=np.float64) + 0.5) * stride
        gy, gx = np.meshgrid(cy, cx, indexing="ij")
        centers = np.stack([gy, gx, gy, gx], axis=-1).reshape(-1, 1, 4)
        boxes = (centers + _level_templates(stride, spec)[None, :, :]).reshape(-1, 4)
        levels.append(AnchorLevel(level, stride, grid_h, grid_w, boxes))
    return AnchorPyramid(float(image_h), float(image_w), spec, tuple(levels))


def level_of_box(
    box: Box,
    min_level: int,
    max_level: int,
    base_size_multiplier: float = 4.0,
) -> int:
    """Pyramid level that "owns" a box of this scale, clamped to the range."""
    area = box.area
    if area <= 0:
        raise ValueError("level_of_box requires a positive-area box")
    raw = math.floor(math.log2(math.sqrt(area) / base_size_multiplier))
    return int(min(max(raw, min_level), max_level))
