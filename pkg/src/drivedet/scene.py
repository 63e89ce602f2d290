"""Shared domain records: frames, ground truths, detections.

The class universe follows the driving-scene convention: 1 = vehicle,
2 = pedestrian, 3 = cyclist. Difficulty has two buckets; L2 marks the
harder (small) objects, which the stricter metric counts and the lenient
one ignores.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Tuple

from .geometry import Box

CLASS_NAMES = {1: "vehicle", 2: "pedestrian", 3: "cyclist"}


class Difficulty(enum.Enum):
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class GroundTruth:
    frame_id: int
    box: Box
    class_id: int
    difficulty: Difficulty


@dataclass(frozen=True)
class Detection:
    frame_id: int
    box: Box
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class Frame:
    frame_id: int
    height: float
    width: float
    gts: Tuple[GroundTruth, ...] = ()

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"frame dimensions must be positive, got {self.height}x{self.width}")
        object.__setattr__(self, "gts", tuple(self.gts))
