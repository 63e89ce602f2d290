"""End-to-end inference pipelines: two-stage cascade and one-stage.

The two-stage path decodes every anchor against the RPN outputs, keeps
the strongest proposals (class-agnostic NMS then a hard cap), and runs
them through a cascade of refinement stages, re-decoding each stage's
deltas against the previous stage's boxes. The one-stage path decodes
anchors directly into detections. Both finish with per-class NMS, a
score floor, and a detection cap.

Heads are pluggable: the synthetic oracle head lives in
:mod:`drivedet.synth`; :class:`FileHead` replays recorded
:class:`HeadOutputs`, and :class:`RecordingHead` captures them so a run
can be replayed bit-for-bit.

Frames are independent; :func:`detect_frames` maps over them, optionally
with a thread pool, and always returns results in frame order.
"""

from __future__ import annotations

import abc
import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .anchors import AnchorPyramid, AnchorSpec, RPN_ANCHOR_SPEC, generate_pyramid
from .geometry import Box, decode_boxes
from .matching import CascadeConfig
from .numeric import PrecisionMode, with_precision
from .scene import Detection, Frame
from .suppression import nms_indices


@dataclass(frozen=True)
class PipelineConfig:
    """Every inference-time knob in one place."""

    min_level: int = 2
    max_level: int = 6
    num_proposals: int = 512
    rpn_nms_threshold: float = 0.7
    final_nms_threshold: float = 0.7
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    score_threshold: float = 0.05
    max_detections: int = 300
    precision: PrecisionMode = PrecisionMode.FULL
    anchor_spec: AnchorSpec = RPN_ANCHOR_SPEC
    stage_score_mode: str = "last"  # or "mean": average classifier over stages

    def __post_init__(self) -> None:
        if self.num_proposals < 1:
            raise ValueError(f"num_proposals must be >= 1, got {self.num_proposals}")
        for name in ("rpn_nms_threshold", "final_nms_threshold"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.max_detections < 0:
            raise ValueError(f"max_detections must be >= 0, got {self.max_detections}")
        if self.stage_score_mode not in ("last", "mean"):
            raise ValueError(f"stage_score_mode must be 'last' or 'mean', got {self.stage_score_mode}")
        # Level-range validity is enforced by pyramid generation; fail early here.
        _pyramid_cached(64.0, 64.0, self.min_level, self.max_level, self.anchor_spec)


class RpnOutput(NamedTuple):
    scores: np.ndarray  # (A,) objectness
    deltas: np.ndarray  # (A, 4)


class StageOutput(NamedTuple):
    class_scores: np.ndarray  # (P, C)
    deltas: np.ndarray  # (P, 4)
    class_ids: Tuple[int, ...]  # column -> class id


class OneStageOutput(NamedTuple):
    class_scores: np.ndarray  # (A, C)
    deltas: np.ndarray  # (A, 4)
    class_ids: Tuple[int, ...]


@dataclass
class HeadOutputs:
    """Per-frame head responses, as produced or as recorded for replay."""

    rpn: Optional[RpnOutput] = None
    stages: List[StageOutput] = field(default_factory=list)
    one_stage: Optional[OneStageOutput] = None


class Head(abc.ABC):
    """Source of head outputs for a frame; implementations may support a subset."""

    def rpn(self, frame: Frame, pyramid: AnchorPyramid) -> RpnOutput:
        raise NotImplementedError

    def stage(self, frame: Frame, boxes: np.ndarray, stage_index: int) -> StageOutput:
        raise NotImplementedError

    def one_stage(self, frame: Frame, pyramid: AnchorPyramid) -> OneStageOutput:
        raise NotImplementedError


class FileHead(Head):
    """Replays recorded per-frame HeadOutputs."""

    def __init__(self, outputs: Dict[int, HeadOutputs]):
        self._outputs = dict(outputs)

    def _frame(self, frame: Frame) -> HeadOutputs:
        try:
            return self._outputs[frame.frame_id]
        except KeyError:
            raise ValueError(f"no recorded head outputs for frame {frame.frame_id}") from None

    def rpn(self, frame: Frame, pyramid: AnchorPyramid) -> RpnOutput:
        out = self._frame(frame).rpn
        if out is None:
            raise ValueError(f"frame {frame.frame_id}: no RPN outputs recorded")
        return out

    def stage(self, frame: Frame, boxes: np.ndarray, stage_index: int) -> StageOutput:
        stages = self._frame(frame).stages
        if stage_index >= len(stages):
            raise ValueError(
                f"frame {frame.frame_id}: head recorded {len(stages)} cascade stages, "
                f"config asked for stage index {stage_index}"
            )
        out = stages[stage_index]
        if out.deltas.shape[0] != np.asarray(boxes).shape[0]:
            raise ValueError(
                f"frame {frame.frame_id} stage {stage_index}: recorded outputs cover "
                f"{out.deltas.shape[0]} proposals, pipeline supplied {np.asarray(boxes).shape[0]}"
            )
        return out

    def one_stage(self, frame: Frame, pyramid: AnchorPyramid) -> OneStageOutput:
        out = self._frame(frame).one_stage
        if out is None:
            raise ValueError(f"frame {frame.frame_id}: no one-stage outputs recorded")
        return out


class RecordingHead(Head):
    """Wraps another head and captures everything it returns."""

    def __init__(self, inner: Head):
        self.inner = inner
        self.recorded: Dict[int, HeadOutputs] = {}

    def _slot(self, frame: Frame) -> HeadOutputs:
        return self.recorded.setdefault(frame.frame_id, HeadOutputs())

    def rpn(self, frame: Frame, pyramid: AnchorPyramid) -> RpnOutput:
        out = self.inner.rpn(frame, pyramid)
        self._slot(frame).rpn = out
        return out

    def stage(self, frame: Frame, boxes: np.ndarray, stage_index: int) -> StageOutput:
        out = self.inner.stage(frame, boxes, stage_index)
        stages = self._slot(frame).stages
        if stage_index != len(stages):
            raise ValueError(f"stages must be recorded in order, got index {stage_index}")
        stages.append(out)
        return out

    def one_stage(self, frame: Frame, pyramid: AnchorPyramid) -> OneStageOutput:
        out = self.inner.one_stage(frame, pyramid)
        self._slot(frame).one_stage = out
        return out


@lru_cache(maxsize=16)
def _pyramid_cached(
    image_h: float, image_w: float, min_level: int, max_level: int, spec: AnchorSpec
) -> AnchorPyramid:
    return generate_pyramid(image_h, image_w, min_level, max_level, spec)


def pyramid_for(frame: Frame, config: PipelineConfig) -> AnchorPyramid:
    return _pyramid_cached(
        float(frame.height), float(frame.width), config.min_level, config.max_level,
        config.anchor_spec,
    )


def _alignment_error(pyramid: AnchorPyramid, got: int, what: str) -> ValueError:
    cumulative = 0
    for lv in pyramid.levels:
        if got < cumulative + lv.num_anchors:
            break
        cumulative += lv.num_anchors
    counts = ", ".join(f"L{l}:{n}" for l, n in pyramid.per_level_counts())
    return ValueError(
        f"{what} provide {got} rows but the pyramid has {pyramid.total_anchors} anchors "
        f"({counts}); first mismatch at level L{lv.level}"
    )


def _span(clock, name: str):
    return clock.span(name) if clock is not None else contextlib.nullcontext()


def _score_transform(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, 0.0, 1.0)


def rpn_proposals(
    pyramid: AnchorPyramid,
    rpn_out: RpnOutput,
    config: PipelineConfig,
    image_h: float,
    image_w: float,
) -> np.ndarray:
    """Decode, clip, suppress, and cap region proposals.

    Anchors with non-positive objectness carry no signal and are dropped
    before NMS, as are boxes that clip to zero size (fully outside the
    image); a degenerate proposal has no region for the stages to refine.
    Truncating the greedy NMS at ``num_proposals`` equals running it
    fully and then taking the top k.
    """
    scores = np.asarray(rpn_out.scores, dtype=np.float64)
    deltas = np.asarray(rpn_out.deltas, dtype=np.float64)
    if scores.shape[0] != pyramid.total_anchors or deltas.shape[0] != pyramid.total_anchors:
        raise _alignment_error(pyramid, int(scores.shape[0]), "RPN outputs")
    decode = with_precision(config.precision, decode_boxes)
    transform = with_precision(config.precision, _score_transform)
    scores = transform(scores)
    keep = scores > 0.0
    boxes = decode(deltas[keep], pyramid.all_boxes()[keep], clip_to=(image_h, image_w))
    scores = scores[keep]
    alive = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes = boxes[alive]
    kept = nms_indices(
        boxes, scores[alive], config.rpn_nms_threshold, max_keep=config.num_proposals
    )
    return boxes[kept]


def _collect_detections(
    frame: Frame,
    boxes: np.ndarray,
    class_scores: np.ndarray,
    class_ids: Tuple[int, ...],
    config: PipelineConfig,
) -> List[Detection]:
    """Per-class NMS + score floor + detection cap over (box, class) candidates."""
    cand_boxes = []
    cand_scores = []
    cand_classes = []
    for col, cid in enumerate(class_ids):
        col_scores = class_scores[:, col]
        mask = col_scores >= config.score_threshold
        if not np.any(mask):
            continue
        sub_boxes = boxes[mask]
        sub_scores = col_scores[mask]
        kept = nms_indices(sub_boxes, sub_scores, config.final_nms_threshold)
        cand_boxes.append(sub_boxes[kept])
        cand_scores.append(sub_scores[kept])
        cand_classes.append(np.full(kept.shape[0], cid, dtype=np.int64))
    if not cand_boxes:
        return []
    all_boxes = np.concatenate(cand_boxes)
    all_scores = np.concatenate(cand_scores)
    all_classes = np.concatenate(cand_classes)
    order = np.lexsort((all_classes, -all_scores))[: config.max_detections]
    return [
        Detection(
            frame_id=frame.frame_id,
            box=Box(*(float(v) for v in all_boxes[i])),
            class_id=int(all_classes[i]),
            score=float(all_scores[i]),
        )
        for i in order
    ]


@dataclass
class TwoStageResult:
    detections: List[Detection]
    proposals: np.ndarray  # (P, 4) stage-0 inputs
    per_stage_boxes: List[np.ndarray]  # refined boxes after each cascade stage
    stage_input_counts: Tuple[int, ...]


def run_two_stage(
    frame: Frame,
    head: Head,
    config: PipelineConfig = PipelineConfig(),
    clock=None,
) -> TwoStageResult:
    """Cascade inference: proposals, per-stage refinement, final selection."""
    pyramid = pyramid_for(frame, config)
    with _span(clock, "rpn"):
        rpn_out = head.rpn(frame, pyramid)
        proposals = rpn_proposals(pyramid, rpn_out, config, frame.height, frame.width)
    decode = with_precision(config.precision, decode_boxes)
    transform = with_precision(config.precision, _score_transform)
    boxes = proposals
    per_stage: List[np.ndarray] = []
    stage_scores: List[np.ndarray] = []
    class_ids: Tuple[int, ...] = ()
    counts = []
    for s in range(config.cascade.num_stages):
        with _span(clock, f"stage_{s + 1}"):
            counts.append(int(boxes.shape[0]))
            out = head.stage(frame, boxes, s)
            if out.deltas.shape[0] != boxes.shape[0] or out.class_scores.shape[0] != boxes.shape[0]:
                raise ValueError(
                    f"stage {s} outputs cover {out.deltas.shape[0]} proposals, "
                    f"expected {boxes.shape[0]}"
                )
            class_ids = tuple(out.class_ids)
            boxes = decode(out.deltas, boxes, clip_to=(frame.height, frame.width))
            per_stage.append(boxes)
            stage_scores.append(np.asarray(out.class_scores, dtype=np.float64))
    with _span(clock, "final_nms"):
        if stage_scores:
            if config.stage_score_mode == "mean":
                raw = np.mean(np.stack(stage_scores), axis=0)
            else:
                raw = stage_scores[-1]
            scores = transform(raw)
            detections = _collect_detections(frame, boxes, scores, class_ids, config)
        else:
            detections = []
    return TwoStageResult(detections, proposals, per_stage, tuple(counts))


def run_one_stage(
    frame: Frame,
    head: Head,
    config: PipelineConfig = PipelineConfig(),
    clock=None,
) -> List[Detection]:
    """Single-shot inference: decode anchors straight into detections."""
    pyramid = pyramid_for(frame, config)
    with _span(clock, "one_stage_head"):
        out = head.one_stage(frame, pyramid)
        if out.deltas.shape[0] != pyramid.total_anchors:
            raise _alignment_error(pyramid, int(out.deltas.shape[0]), "one-stage outputs")
    decode = with_precision(config.precision, decode_boxes)
    transform = with_precision(config.precision, _score_transform)
    with _span(clock, "decode"):
        scores = transform(np.asarray(out.class_scores, dtype=np.float64))
        # Decode only anchors that can clear the score floor for some class.
        alive = np.any(scores >= config.score_threshold, axis=1)
        boxes = decode(
            np.asarray(out.deltas, dtype=np.float64)[alive],
            pyramid.all_boxes()[alive],
            clip_to=(frame.height, frame.width),
        )
    with _span(clock, "final_nms"):
        detections = _collect_detections(
            frame, boxes, scores[alive], tuple(out.class_ids), config
        )
    return detections


def detect_frames(
    frames: Sequence[Frame],
    head: Head,
    config: PipelineConfig = PipelineConfig(),
    one_stage: bool = False,
    jobs: int = 1,
    clock=None,
):
    """Run the pipeline over frames, in frame order.

    Returns a list of TwoStageResult (two-stage) or detection lists
    (one-stage). With ``jobs > 1`` frames run on a thread pool; per-stage
    timing is only meaningful single-threaded, so ``clock`` is ignored
    in parallel mode.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")

    def one(frame: Frame):
        if one_stage:
            return run_one_stage(frame, head, config, clock=clock if jobs == 1 else None)
        return run_two_stage(frame, head, config, clock=clock if jobs == 1 else None)

    if jobs == 1 or len(frames) <= 1:
        return [one(f) for f in frames]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, frames))
