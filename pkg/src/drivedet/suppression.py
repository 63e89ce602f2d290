"""Non-maximum suppression and top-k proposal selection.

Two NMS routes share one contract and are kept deliberately separate:

* :func:`greedy_nms` / :func:`nms_indices` — the vectorized path used by
  the inference pipeline,
* :func:`nms_oracle` — a literal, pure-Python rendering of the greedy
  rule, used as the reference in tests.

Shared boundary semantics: a kept box suppresses others at IoU strictly
greater than the threshold; score ties are broken by input index (earlier
wins); output is sorted by descending score and truncated at ``max_keep``.
Because kept items are produced in descending-score order, truncation
during the greedy loop equals full NMS followed by top-k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import Box, to_array


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float
    class_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be finite and in [0, 1], got {self.score}")


def _check_iou_threshold(iou_threshold: float) -> None:
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")


def nms_indices(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float,
    max_keep: Optional[int] = None,
) -> np.ndarray:
    """Greedy NMS over parallel arrays; returns kept indices, best first."""
    _check_iou_threshold(iou_threshold)
    boxes = to_array(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError(f"boxes and scores must align, got {boxes.shape[0]} vs {scores.shape[0]}")
    if boxes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    y0, x0, y1, x1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (y1 - y0) * (x1 - x0)
    keep: List[int] = []
    limit = len(order) if max_keep is None else max(0, int(max_keep))
    while order.size > 0 and len(keep) < limit:
        i = int(order[0])
        keep.append(i)
        rest = order[1:]
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        inter = np.clip(ih, 0.0, None) * np.clip(iw, 0.0, None)
        union = areas[i] + areas[rest] - inter
        ious = np.zeros_like(inter)
        np.divide(inter, union, out=ious, where=union > 0.0)
        order = rest[ious <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


def greedy_nms(
    items: Sequence[ScoredBox],
    iou_threshold: float,
    max_keep: Optional[int] = None,
) -> List[ScoredBox]:
    """Greedy NMS over scored boxes; see module docstring for semantics."""
    _check_iou_threshold(iou_threshold)
    if not items:
        return []
    boxes = to_array([it.box for it in items])
    scores = np.array([it.score for it in items], dtype=np.float64)
    kept = nms_indices(boxes, scores, iou_threshold, max_keep=max_keep)
    return [items[i] for i in kept]


def nms_oracle(
    items: Sequence[ScoredBox],
    iou_threshold: float,
    max_keep: Optional[int] = None,
) -> List[ScoredBox]:
    """Reference NMS: literal greedy rule, plain Python, O(n^2) worst case."""
    _check_iou_threshold(iou_threshold)
    alive = sorted(range(len(items)), key=lambda i: (-items[i].score, i))
    kept: List[int] = []
    while alive and (max_keep is None or len(kept) < max_keep):
        head = alive[0]
        kept.append(head)
        hb = items[head].box
        survivors = []
        for j in alive[1:]:
            jb = items[j].box
            ih = min(hb.ymax, jb.ymax) - max(hb.ymin, jb.ymin)
            iw = min(hb.xmax, jb.xmax) - max(hb.xmin, jb.xmin)
            inter = ih * iw if (ih > 0.0 and iw > 0.0) else 0.0
            union = hb.area + jb.area - inter
            overlap = inter / union if union > 0.0 else 0.0
            if overlap <= iou_threshold:
                survivors.append(j)
        alive = survivors
    return [items[i] for i in kept]


def top_k(items: Sequence[ScoredBox], k: int) -> List[ScoredBox]:
    """The k highest-score items, descending score, stable on ties."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    order = sorted(range(len(items)), key=lambda i: (-items[i].score, i))
    return [items[i] for i in order[:k]]


def per_class_nms(
    items: Sequence[ScoredBox],
    iou_threshold: float,
    max_keep: Optional[int] = None,
) -> List[ScoredBox]:
    """Class-partitioned greedy NMS, merged by (score desc, input index)."""
    by_class: dict = {}
    for idx, it in enumerate(items):
        by_class.setdefault(it.class_id, []).append(idx)
    kept_idx: List[int] = []
    for _, idxs in sorted(by_class.items(), key=lambda kv: (kv[0] is None, kv[0])):
        subset = [items[i] for i in idxs]
        boxes = to_array([it.box for it in subset])
        scores = np.array([it.score for it in subset], dtype=np.float64)
        for local in nms_indices(boxes, scores, iou_threshold):
            kept_idx.append(idxs[local])
    kept_idx.sort(key=lambda i: (-items[i].score, i))
    if max_keep is not None:
        kept_idx = kept_idx[: max(0, int(max_keep))]
    return [items[i] for i in kept_idx]
