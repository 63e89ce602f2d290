"""Seeded synthetic driving scenes and an oracle detection head.

Scenes are crowd-heavy and skewed toward small objects: box edge lengths
follow a log-normal truncated to ``[min_edge, min(image dims)]``, aspect
ratios are log-uniform and area-preserving (a box of edge ``e`` always has
area ``e**2``), and with probability ``crowd_cluster_prob`` an object is
spawned overlapping an existing one. Pairwise ground-truth IoU is capped
at ``max_pairwise_iou`` by rejection so crowd pairs stay separable by a
0.7 NMS while colliding under a 0.5 one. Difficulty is L2 below the area
threshold, L1 otherwise.

The oracle head stands in for trained heads. Scores are the true best
IoU plus Gaussian noise; box deltas point at the best-overlapping ground
truth, with Gaussian noise whose scale shrinks stage by stage (that is
the whole cascade effect). Two deliberate modeling choices:

* an anchor or proposal only regresses toward objects it can see
  (best IoU >= ``min_visible_iou``); otherwise its deltas are zero,
* delta noise is drawn once per object per stage, not per proposal, so
  duplicate proposals of one object refine consistently and collapse
  under NMS the way a trained head's duplicates do.

All randomness is numpy PCG64 seeded via ``SeedSequence(seed, frame_id,
stream)``; frames are independently reproducible and safe to generate or
run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .anchors import AnchorPyramid
from .geometry import Box, encode_boxes, iou_matrix, to_array
from .pipeline import Head, OneStageOutput, RpnOutput, StageOutput
from .scene import CLASS_NAMES, Difficulty, Frame, GroundTruth

# Stream tags for per-frame RNG derivation.
_STREAM_SCENE = 0
_STREAM_RPN = 1
_STREAM_ONE_STAGE = 2
_STREAM_STAGE_BASE = 10  # cascade stage s uses _STREAM_STAGE_BASE + s


@dataclass(frozen=True)
class SceneConfig:
    image_h: int = 192
    image_w: int = 288
    frames: int = 40
    objects_per_frame: Tuple[int, int] = (6, 14)
    class_mix: Mapping[int, float] = None  # defaults to vehicle-heavy mix
    size_log_mean: float = math.log(24.0)
    size_log_std: float = 0.6
    min_edge: float = 8.0
    aspect_ratio_range: Tuple[float, float] = (0.5, 2.0)
    crowd_cluster_prob: float = 0.5
    max_pairwise_iou: float = 0.65
    l2_area_threshold: float = 144.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.class_mix is None:
            object.__setattr__(self, "class_mix", {1: 0.55, 2: 0.30, 3: 0.15})
        object.__setattr__(self, "class_mix", dict(self.class_mix))
        if self.image_h <= 0 or self.image_w <= 0:
            raise ValueError("image dimensions must be positive")
        if self.frames < 0:
            raise ValueError("frames must be >= 0")
        lo, hi = self.objects_per_frame
        if not (0 <= lo <= hi):
            raise ValueError(f"objects_per_frame must satisfy 0 <= min <= max, got {lo, hi}")
        total = sum(self.class_mix.values())
        if abs(total - 1.0) > 1e-9 or any(p < 0 for p in self.class_mix.values()):
            raise ValueError(f"class_mix must be non-negative and sum to 1, got {self.class_mix}")
        if any(c not in CLASS_NAMES for c in self.class_mix):
            raise ValueError(f"class_mix keys must be known classes {sorted(CLASS_NAMES)}")
        if self.size_log_std <= 0 or self.min_edge <= 0:
            raise ValueError("size_log_std and min_edge must be positive")
        ar_lo, ar_hi = self.aspect_ratio_range
        if not (0 < ar_lo <= ar_hi):
            raise ValueError(f"invalid aspect_ratio_range {self.aspect_ratio_range}")
        if not (0.0 <= self.crowd_cluster_prob <= 1.0):
            raise ValueError("crowd_cluster_prob must lie in [0, 1]")
        if not (0.0 < self.max_pairwise_iou < 1.0):
            raise ValueError("max_pairwise_iou must lie in (0, 1)")
        if self.l2_area_threshold <= 0:
            raise ValueError("l2_area_threshold must be positive")
        if self.min_edge > min(self.image_h, self.image_w):
            raise ValueError(
                f"min_edge {self.min_edge} exceeds image dims "
                f"{self.image_h}x{self.image_w}: objects cannot fit"
            )

    @property
    def max_edge(self) -> float:
        return float(min(self.image_h, self.image_w))


def _rng(seed: int, frame_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, frame_id, stream]))


_PLACEMENT_ATTEMPTS = 100


def _sample_object(
    rng: np.random.Generator, config: SceneConfig, existing: List[Box]
) -> Box:
    h_img, w_img = float(config.image_h), float(config.image_w)
    ar_lo, ar_hi = config.aspect_ratio_range
    for _ in range(_PLACEMENT_ATTEMPTS):
        edge = float(rng.lognormal(config.size_log_mean, config.size_log_std))
        if not (config.min_edge <= edge <= config.max_edge):
            continue
        ar = float(np.exp(rng.uniform(math.log(ar_lo), math.log(ar_hi))))
        h = edge * math.sqrt(ar)
        w = edge / math.sqrt(ar)
        if h > h_img or w > w_img:
            continue
        cluster = existing and float(rng.random()) < config.crowd_cluster_prob
        if cluster:
            # Tight offsets concentrate pair IoU just under the cap, the
            # regime where a 0.5 vs 0.7 NMS threshold changes the outcome.
            partner = existing[int(rng.integers(0, len(existing)))]
            pcy, pcx = partner.center
            cy = pcy + float(rng.uniform(-0.25, 0.25)) * partner.height
            cx = pcx + float(rng.uniform(-0.25, 0.25)) * partner.width
        else:
            cy = float(rng.uniform(0.5 * h, h_img - 0.5 * h))
            cx = float(rng.uniform(0.5 * w, w_img - 0.5 * w))
        cy = min(max(cy, 0.5 * h), h_img - 0.5 * h)
        cx = min(max(cx, 0.5 * w), w_img - 0.5 * w)
        box = Box(cy - 0.5 * h, cx - 0.5 * w, cy + 0.5 * h, cx + 0.5 * w)
        if existing:
            overlaps = iou_matrix([box], existing)[0]
            if float(overlaps.max()) > config.max_pairwise_iou:
                continue
        return box
    raise ValueError(
        "could not place an object within "
        f"{_PLACEMENT_ATTEMPTS} attempts; SceneConfig is infeasible "
        f"(sizes ~lognormal(mean={config.size_log_mean:.3f}, std={config.size_log_std:.3f}) "
        f"in a {config.image_h}x{config.image_w} image)"
    )


def generate_scenes(config: SceneConfig) -> List[Frame]:
    """Deterministically generate frames with ground truths."""
    frames: List[Frame] = []
    class_ids = sorted(config.class_mix)
    probs = np.array([config.class_mix[c] for c in class_ids], dtype=np.float64)
    probs = probs / probs.sum()
    for frame_id in range(config.frames):
        rng = _rng(config.seed, frame_id, _STREAM_SCENE)
        lo, hi = config.objects_per_frame
        n = int(rng.integers(lo, hi + 1))
        boxes: List[Box] = []
        gts: List[GroundTruth] = []
        for _ in range(n):
            cid = int(rng.choice(class_ids, p=probs))
            box = _sample_object(rng, config, boxes)
            boxes.append(box)
            difficulty = (
                Difficulty.L2 if box.area < config.l2_area_threshold else Difficulty.L1
            )
            gts.append(GroundTruth(frame_id, box, cid, difficulty))
        frames.append(Frame(frame_id, config.image_h, config.image_w, tuple(gts)))
    return frames


def expected_l2_fraction(config: SceneConfig) -> float:
    """Closed-form probability that a generated object is L2 difficulty.

    Edge is log-normal truncated to [min_edge, max_edge], area is exactly
    edge**2, so P(area < T) is a ratio of normal CDFs.
    """
    mu, sigma = config.size_log_mean, config.size_log_std

    def cdf(edge: float) -> float:
        return 0.5 * (1.0 + math.erf((math.log(edge) - mu) / (sigma * math.sqrt(2.0))))

    lo, hi = cdf(config.min_edge), cdf(config.max_edge)
    threshold_edge = math.sqrt(config.l2_area_threshold)
    if threshold_edge <= config.min_edge:
        return 0.0
    t = cdf(min(threshold_edge, config.max_edge))
    return (t - lo) / (hi - lo)


def benchmark_scene_config(seed: int, frames: int = 40, **overrides) -> SceneConfig:
    """The canonical crowd-heavy benchmark scene set used by `ablate` and tests."""
    params = dict(
        image_h=192,
        image_w=288,
        frames=frames,
        objects_per_frame=(6, 14),
        crowd_cluster_prob=0.5,
        seed=seed,
    )
    params.update(overrides)
    return SceneConfig(**params)


@dataclass(frozen=True)
class OracleHeadConfig:
    """Controls the quality of the synthetic head's predictions.

    ``delta_noise_std_per_stage`` must have at least one entry per cascade
    stage; the first entry also drives the RPN and one-stage box noise.
    ``fp_rate`` is the expected number of spurious high-score anchors
    injected per frame (Poisson).
    """

    score_noise_std: float = 0.05
    delta_noise_std_per_stage: Tuple[float, ...] = (0.15, 0.10, 0.05)
    fp_rate: float = 1.0
    min_visible_iou: float = 0.2
    seed: int = 0
    class_ids: Tuple[int, ...] = (1, 2, 3)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "delta_noise_std_per_stage",
            tuple(float(s) for s in self.delta_noise_std_per_stage),
        )
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        if self.score_noise_std < 0 or any(s < 0 for s in self.delta_noise_std_per_stage):
            raise ValueError("noise stds must be >= 0")
        if not self.delta_noise_std_per_stage:
            raise ValueError("need at least one per-stage delta noise std")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be >= 0")
        if not (0.0 <= self.min_visible_iou < 1.0):
            raise ValueError("min_visible_iou must lie in [0, 1)")
        if not self.class_ids:
            raise ValueError("class_ids must be non-empty")


class OracleHead(Head):
    """Synthetic head deriving outputs from ground truth plus noise."""

    def __init__(self, config: OracleHeadConfig = OracleHeadConfig()):
        self.config = config

    def _gt_geometry(self, frame: Frame):
        gt_boxes = to_array([g.box for g in frame.gts])
        gt_classes = np.array([g.class_id for g in frame.gts], dtype=np.int64)
        return gt_boxes, gt_classes

    def _box_targets(
        self,
        boxes: np.ndarray,
        gt_boxes: np.ndarray,
        gt_noise: np.ndarray,
        noise_std: float,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Best-IoU per box, per-class-agnostic deltas, and the IoU matrix.

        Deltas aim at the best-overlapping ground truth when the box sees
        one (IoU >= min_visible_iou) and are zero otherwise. The noise
        added to a delta belongs to the target object, not the box.
        """
        n = boxes.shape[0]
        deltas = np.zeros((n, 4), dtype=np.float64)
        if gt_boxes.shape[0] == 0 or n == 0:
            return np.zeros(n), deltas, np.zeros((n, gt_boxes.shape[0]))
        ious = iou_matrix(boxes, gt_boxes)
        best_idx = ious.argmax(axis=1)
        best_iou = ious[np.arange(n), best_idx]
        h = boxes[:, 2] - boxes[:, 0]
        w = boxes[:, 3] - boxes[:, 1]
        visible = (best_iou >= self.config.min_visible_iou) & (h > 0) & (w > 0)
        if np.any(visible):
            idx = best_idx[visible]
            deltas[visible] = (
                encode_boxes(gt_boxes[idx], boxes[visible]) + noise_std * gt_noise[idx]
            )
        return best_iou, deltas, ious

    def _class_scores(
        self, ious: np.ndarray, gt_classes: np.ndarray, score_noise: np.ndarray
    ) -> np.ndarray:
        n = ious.shape[0] if ious.ndim == 2 else 0
        cols = []
        for cid in self.config.class_ids:
            mask = gt_classes == cid
            if gt_classes.size and np.any(mask):
                cols.append(ious[:, mask].max(axis=1))
            else:
                cols.append(np.zeros(n, dtype=np.float64))
        raw = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
        return np.clip(raw + self.config.score_noise_std * score_noise, 0.0, 1.0)

    def rpn(self, frame: Frame, pyramid: AnchorPyramid) -> RpnOutput:
        anchors = pyramid.all_boxes()
        gt_boxes, _ = self._gt_geometry(frame)
        rng = _rng(self.config.seed, frame.frame_id, _STREAM_RPN)
        # Fixed draw order keeps streams aligned across pipeline configs.
        gt_noise = rng.normal(size=(gt_boxes.shape[0], 4))
        score_noise = rng.normal(size=anchors.shape[0])
        std0 = self.config.delta_noise_std_per_stage[0]
        best_iou, deltas, _ = self._box_targets(anchors, gt_boxes, gt_noise, std0)
        scores = np.clip(best_iou + self.config.score_noise_std * score_noise, 0.0, 1.0)
        n_fp = int(rng.poisson(self.config.fp_rate))
        if n_fp and anchors.shape[0]:
            idx = rng.integers(0, anchors.shape[0], size=n_fp)
            scores[idx] = rng.uniform(0.5, 1.0, size=n_fp)
            deltas[idx] = rng.normal(0.0, 0.5, size=(n_fp, 4))
        return RpnOutput(scores=scores, deltas=deltas)

    def stage(self, frame: Frame, boxes: np.ndarray, stage_index: int) -> StageOutput:
        stds = self.config.delta_noise_std_per_stage
        if stage_index >= len(stds):
            raise ValueError(
                f"oracle head configured for {len(stds)} cascade stages, "
                f"got stage index {stage_index}"
            )
        boxes = to_array(boxes)
        gt_boxes, gt_classes = self._gt_geometry(frame)
        rng = _rng(self.config.seed, frame.frame_id, _STREAM_STAGE_BASE + stage_index)
        gt_noise = rng.normal(size=(gt_boxes.shape[0], 4))
        score_noise = rng.normal(size=(boxes.shape[0], len(self.config.class_ids)))
        _, deltas, ious = self._box_targets(boxes, gt_boxes, gt_noise, stds[stage_index])
        class_scores = self._class_scores(ious, gt_classes, score_noise)
        return StageOutput(
            class_scores=class_scores, deltas=deltas, class_ids=self.config.class_ids
        )

    def one_stage(self, frame: Frame, pyramid: AnchorPyramid) -> OneStageOutput:
        anchors = pyramid.all_boxes()
        gt_boxes, gt_classes = self._gt_geometry(frame)
        rng = _rng(self.config.seed, frame.frame_id, _STREAM_ONE_STAGE)
        gt_noise = rng.normal(size=(gt_boxes.shape[0], 4))
        score_noise = rng.normal(size=(anchors.shape[0], len(self.config.class_ids)))
        std0 = self.config.delta_noise_std_per_stage[0]
        _, deltas, ious = self._box_targets(anchors, gt_boxes, gt_noise, std0)
        class_scores = self._class_scores(ious, gt_classes, score_noise)
        n_fp = int(rng.poisson(self.config.fp_rate))
        if n_fp and anchors.shape[0]:
            idx = rng.integers(0, anchors.shape[0], size=n_fp)
            col = rng.integers(0, len(self.config.class_ids), size=n_fp)
            class_scores[idx, col] = rng.uniform(0.5, 1.0, size=n_fp)
            deltas[idx] = rng.normal(0.0, 0.5, size=(n_fp, 4))
        return OneStageOutput(
            class_scores=class_scores, deltas=deltas, class_ids=self.config.class_ids
        )
