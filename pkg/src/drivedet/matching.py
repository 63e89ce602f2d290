"""IoU-based assignment of proposals to ground truths.

Each proposal is matched to its argmax-IoU ground truth (ties broken by
lowest ground-truth index); it is foreground iff that IoU reaches the
stage's foreground threshold. Cascade stages share one proposal set but
qualify it at increasing thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import BoxesLike, iou_matrix, to_array

BACKGROUND = -1


@dataclass(frozen=True)
class CascadeConfig:
    """Per-stage foreground IoU thresholds; strictly increasing in (0, 1)."""

    stage_fg_thresholds: Tuple[float, ...] = (0.5, 0.6, 0.7)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "stage_fg_thresholds", tuple(float(t) for t in self.stage_fg_thresholds)
        )
        ts = self.stage_fg_thresholds
        if not ts:
            raise ValueError("need at least one cascade stage")
        if any(not (0.0 < t < 1.0) for t in ts):
            raise ValueError(f"stage thresholds must lie in (0, 1), got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"stage thresholds must be strictly increasing, got {ts}")

    @property
    def num_stages(self) -> int:
        return len(self.stage_fg_thresholds)


@dataclass(frozen=True)
class Assignment:
    """Per-proposal match result: gt index (or BACKGROUND) and best IoU."""

    matched_gt: np.ndarray  # int64, BACKGROUND where below threshold
    max_iou: np.ndarray  # float64

    @property
    def foreground(self) -> np.ndarray:
        return self.matched_gt != BACKGROUND

    @property
    def num_foreground(self) -> int:
        return int(np.count_nonzero(self.foreground))


def assign(proposals: BoxesLike, gts: BoxesLike, fg_threshold: float) -> Assignment:
    """Match every proposal to its best ground truth at ``fg_threshold``.

    Empty ``gts`` yields all-background with max IoU 0.
    """
    if not (0.0 < fg_threshold < 1.0):
        raise ValueError(f"fg_threshold must lie in (0, 1), got {fg_threshold}")
    props = to_array(proposals)
    gt_arr = to_array(gts)
    n = props.shape[0]
    if gt_arr.shape[0] == 0:
        return Assignment(
            np.full(n, BACKGROUND, dtype=np.int64), np.zeros(n, dtype=np.float64)
        )
    m = iou_matrix(props, gt_arr)
    best = m.argmax(axis=1)  # argmax returns the lowest index on ties
    max_iou = m[np.arange(n), best]
    matched = np.where(max_iou >= fg_threshold, best, BACKGROUND).astype(np.int64)
    return Assignment(matched, max_iou)


@dataclass(frozen=True)
class StageQuality:
    """Diagnostic summary of a proposal set against the ground truths.

    ``mean_matched_iou`` averages best-IoU over proposals that overlap any
    ground truth at all (max IoU > 0); ``matched_count`` is how many did.
    ``fg_fractions[i]`` is the fraction of all proposals reaching cascade
    stage ``i``'s foreground threshold.
    """

    mean_matched_iou: float
    matched_count: int
    fg_fractions: Tuple[float, ...]


def stage_quality(
    proposals: BoxesLike, gts: BoxesLike, cascade: CascadeConfig = CascadeConfig()
) -> StageQuality:
    props = to_array(proposals)
    gt_arr = to_array(gts)
    n = props.shape[0]
    thresholds = cascade.stage_fg_thresholds
    if n == 0:
        return StageQuality(0.0, 0, tuple(0.0 for _ in thresholds))
    if gt_arr.shape[0] == 0:
        max_iou = np.zeros(n, dtype=np.float64)
    else:
        max_iou = iou_matrix(props, gt_arr).max(axis=1)
    overlapping = max_iou > 0.0
    count = int(np.count_nonzero(overlapping))
    mean = float(max_iou[overlapping].mean()) if count else 0.0
    fracs = tuple(float(np.count_nonzero(max_iou >= t)) / n for t in thresholds)
    return StageQuality(mean, count, fracs)
