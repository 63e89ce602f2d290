"""Detection metrics: per-class interpolated AP over difficulty buckets.

Two headline numbers are produced, mirroring driving-benchmark practice:

* ``ap_l1`` counts only L1-difficulty ground truths; detections that hit
  an L2 box are dropped (neither TP nor FP),
* ``ap_l2`` counts every ground truth.

Matching is greedy in descending score order: a detection matches the
highest-IoU not-yet-matched counted ground truth of its class in its
frame, at the class's IoU threshold. Detections with no counted match
that still overlap an ignored ground truth are dropped. Score ties are
ordered by the intrinsic key (frame_id, box corners, class_id) so the
result is independent of detection input order.

AP is the 101-point interpolated kind: the precision envelope sampled at
evenly spaced recall points, averaged. Classes with no counted ground
truth are excluded from the macro mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .geometry import iou
from .scene import Detection, Difficulty, GroundTruth

# Per-detection match labels.
TP = 1
FP = 0
IGNORED = -1

# Matching thresholds by class: vehicles localize strictly, the small
# vulnerable-road-user classes match at 0.5.
DEFAULT_IOU_THRESHOLDS: Dict[int, float] = {1: 0.7, 2: 0.5, 3: 0.5}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Mapping[int, float] = field(
        default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS)
    )
    recall_points: int = 101

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", dict(self.iou_thresholds))
        if not self.iou_thresholds:
            raise ValueError("iou_thresholds must name at least one class")
        for cid, t in self.iou_thresholds.items():
            if not (0.0 < t <= 1.0):
                raise ValueError(f"class {cid}: iou threshold must lie in (0, 1], got {t}")
        if self.recall_points < 2:
            raise ValueError(f"recall_points must be >= 2, got {self.recall_points}")


def _sorted_detection_order(dets: Sequence[Detection]) -> List[int]:
    # Intrinsic tie key: independent of input order.
    return sorted(
        range(len(dets)),
        key=lambda i: (
            -dets[i].score,
            dets[i].frame_id,
            dets[i].box.ymin,
            dets[i].box.xmin,
            dets[i].box.ymax,
            dets[i].box.xmax,
            dets[i].class_id,
        ),
    )


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome, aligned to the sorted detection order."""

    labels: np.ndarray  # int8: TP / FP / IGNORED
    scores: np.ndarray  # float64, non-increasing
    order: np.ndarray  # indices into the input detection sequence
    gt_matched: np.ndarray  # bool, aligned to the input ground-truth sequence
    num_counted_gt: int


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
    difficulty_filter: Difficulty,
) -> MatchResult:
    """Label each detection TP/FP/IGNORED under one difficulty filter.

    ``difficulty_filter`` L1 counts only L1 ground truths (L2 ones become
    ignore regions); L2 counts everything.
    """
    counted = [
        i
        for i, g in enumerate(gts)
        if difficulty_filter is Difficulty.L2 or g.difficulty is Difficulty.L1
    ]
    counted_set = set(counted)
    ignored = [i for i in range(len(gts)) if i not in counted_set]

    by_key_counted: Dict[Tuple[int, int], List[int]] = {}
    for i in counted:
        by_key_counted.setdefault((gts[i].frame_id, gts[i].class_id), []).append(i)
    by_key_ignored: Dict[Tuple[int, int], List[int]] = {}
    for i in ignored:
        by_key_ignored.setdefault((gts[i].frame_id, gts[i].class_id), []).append(i)

    order = _sorted_detection_order(dets)
    labels = np.empty(len(dets), dtype=np.int8)
    gt_matched = np.zeros(len(gts), dtype=bool)
    for rank, det_idx in enumerate(order):
        det = dets[det_idx]
        key = (det.frame_id, det.class_id)
        best_gt = -1
        best_iou = 0.0
        for gi in by_key_counted.get(key, ()):
            if gt_matched[gi]:
                continue
            v = iou(det.box, gts[gi].box)
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_gt = gi
        if best_gt >= 0:
            gt_matched[best_gt] = True
            labels[rank] = TP
            continue
        # Ignore regions absorb any number of detections.
        hits_ignored = any(
            iou(det.box, gts[gi].box) >= iou_threshold for gi in by_key_ignored.get(key, ())
        )
        labels[rank] = IGNORED if hits_ignored else FP
    scores = np.array([dets[i].score for i in order], dtype=np.float64)
    return MatchResult(labels, scores, np.asarray(order, dtype=np.int64), gt_matched, len(counted))


def average_precision(
    labels: np.ndarray,
    scores: np.ndarray,
    num_gt: int,
    recall_points: int = 101,
) -> float:
    """Interpolated AP from ranked TP/FP labels.

    ``labels`` must be in descending-score order; IGNORED entries are
    dropped from the ranking. Returns NaN when ``num_gt`` is 0 (callers
    exclude such classes from the mean).
    """
    if num_gt < 0:
        raise ValueError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return float("nan")
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and np.any(np.diff(scores) > 0):
        raise ValueError("labels/scores must be sorted by descending score")
    kept = labels != IGNORED
    labels = labels[kept]
    if labels.size == 0:
        return 0.0
    tp = np.cumsum(labels == TP, dtype=np.float64)
    fp = np.cumsum(labels == FP, dtype=np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # Monotone non-increasing envelope, right to left.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, grid, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


@dataclass(frozen=True)
class ClassEval:
    ap_l1: float
    ap_l2: float
    num_gt_l1: int
    num_gt_l2: int
    num_detections: int

    def to_dict(self) -> dict:
        return {
            "ap_l1": _json_float(self.ap_l1),
            "ap_l2": _json_float(self.ap_l2),
            "num_gt_l1": self.num_gt_l1,
            "num_gt_l2": self.num_gt_l2,
            "num_detections": self.num_detections,
        }


@dataclass(frozen=True)
class EvalResult:
    ap_l1: float
    ap_l2: float
    per_class: Dict[int, ClassEval]

    def to_dict(self) -> dict:
        return {
            "ap_l1": _json_float(self.ap_l1),
            "ap_l2": _json_float(self.ap_l2),
            "per_class": {str(c): ce.to_dict() for c, ce in sorted(self.per_class.items())},
        }


def _json_float(v: float) -> Optional[float]:
    return None if v != v else float(v)


def _macro_mean(values: List[float]) -> float:
    usable = [v for v in values if v == v]
    return float(np.mean(usable)) if usable else float("nan")


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    config: EvalConfig = EvalConfig(),
) -> EvalResult:
    """Per-class AP at the class's IoU threshold, for both difficulty filters."""
    known = set(config.iou_thresholds)
    unknown = sorted({d.class_id for d in dets} - known)
    if unknown:
        raise ValueError(f"detections carry unknown class ids {unknown}; known: {sorted(known)}")

    per_class: Dict[int, ClassEval] = {}
    l1_values: List[float] = []
    l2_values: List[float] = []
    for cid, threshold in sorted(config.iou_thresholds.items()):
        cls_dets = [d for d in dets if d.class_id == cid]
        cls_gts = [g for g in gts if g.class_id == cid]
        aps = {}
        counts = {}
        for filt in (Difficulty.L1, Difficulty.L2):
            m = match_detections(cls_dets, cls_gts, threshold, filt)
            aps[filt] = average_precision(
                m.labels, m.scores, m.num_counted_gt, config.recall_points
            )
            counts[filt] = m.num_counted_gt
        per_class[cid] = ClassEval(
            ap_l1=aps[Difficulty.L1],
            ap_l2=aps[Difficulty.L2],
            num_gt_l1=counts[Difficulty.L1],
            num_gt_l2=counts[Difficulty.L2],
            num_detections=len(cls_dets),
        )
        l1_values.append(aps[Difficulty.L1])
        l2_values.append(aps[Difficulty.L2])
    return EvalResult(_macro_mean(l1_values), _macro_mean(l2_values), per_class)
