"""File formats: scene/detection JSONL, head-output replay, JSON configs.

Line formats are plain JSON, one record per line:

* scene:     ``{"frame_id", "height", "width", "gts": [{"box": [ymin,
  xmin, ymax, xmax], "class_id", "difficulty": "L1"|"L2"}]}``
* detection: ``{"frame_id", "box": [...], "class_id", "score"}``
* head outputs: ``{"frame_id", "rpn": {"scores", "deltas"}, "stages":
  [{"class_scores", "deltas", "class_ids"}], "one_stage": {...}}`` with
  absent sections omitted.

Config files are single JSON objects whose keys mirror the dataclass
field names; unknown keys are rejected so typos fail loudly. Parsers
report the offending line number on malformed input, and every writer's
output round-trips through its reader.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from .anchors import AnchorSpec
from .evaluation import EvalConfig
from .geometry import Box
from .matching import CascadeConfig
from .numeric import PrecisionMode
from .pipeline import HeadOutputs, OneStageOutput, PipelineConfig, RpnOutput, StageOutput
from .scene import Detection, Difficulty, Frame, GroundTruth
from .synth import OracleHeadConfig, SceneConfig

PathLike = Union[str, Path]


def _fail(path: PathLike, line_no: int, message: str) -> ValueError:
    return ValueError(f"{path}:{line_no}: {message}")


def _require(record: dict, keys: Sequence[str], path: PathLike, line_no: int) -> None:
    missing = [k for k in keys if k not in record]
    if missing:
        raise _fail(path, line_no, f"missing keys {missing}")


def _box_from_json(values, path: PathLike, line_no: int) -> Box:
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        raise _fail(path, line_no, f"box must be a 4-element [ymin, xmin, ymax, xmax] list, got {values!r}")
    try:
        return Box(*(float(v) for v in values))
    except ValueError as exc:
        raise _fail(path, line_no, str(exc)) from None


def _iter_jsonl(path: PathLike):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise _fail(path, line_no, f"invalid JSON: {exc.msg}") from None


def write_scenes(frames: Iterable[Frame], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            record = {
                "frame_id": frame.frame_id,
                "height": frame.height,
                "width": frame.width,
                "gts": [
                    {
                        "box": list(g.box.as_tuple()),
                        "class_id": g.class_id,
                        "difficulty": g.difficulty.value,
                    }
                    for g in frame.gts
                ],
            }
            fh.write(json.dumps(record) + "\n")


def read_scenes(path: PathLike) -> List[Frame]:
    frames: List[Frame] = []
    for line_no, record in _iter_jsonl(path):
        _require(record, ("frame_id", "height", "width", "gts"), path, line_no)
        gts = []
        for g in record["gts"]:
            _require(g, ("box", "class_id", "difficulty"), path, line_no)
            try:
                difficulty = Difficulty(g["difficulty"])
            except ValueError:
                raise _fail(path, line_no, f"difficulty must be L1 or L2, got {g['difficulty']!r}")
            gts.append(
                GroundTruth(
                    frame_id=int(record["frame_id"]),
                    box=_box_from_json(g["box"], path, line_no),
                    class_id=int(g["class_id"]),
                    difficulty=difficulty,
                )
            )
        try:
            frames.append(
                Frame(int(record["frame_id"]), float(record["height"]), float(record["width"]), tuple(gts))
            )
        except ValueError as exc:
            raise _fail(path, line_no, str(exc)) from None
    return frames


def write_detections(dets: Iterable[Detection], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            record = {
                "frame_id": d.frame_id,
                "box": list(d.box.as_tuple()),
                "class_id": d.class_id,
                "score": d.score,
            }
            fh.write(json.dumps(record) + "\n")


def read_detections(path: PathLike) -> List[Detection]:
    dets: List[Detection] = []
    for line_no, record in _iter_jsonl(path):
        _require(record, ("frame_id", "box", "class_id", "score"), path, line_no)
        try:
            dets.append(
                Detection(
                    frame_id=int(record["frame_id"]),
                    box=_box_from_json(record["box"], path, line_no),
                    class_id=int(record["class_id"]),
                    score=float(record["score"]),
                )
            )
        except ValueError as exc:
            raise _fail(path, line_no, str(exc)) from None
    return dets


def _array(values, path: PathLike, line_no: int, what: str) -> np.ndarray:
    try:
        return np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise _fail(path, line_no, f"{what} must be a numeric array") from None


def write_head_outputs(outputs: Dict[int, HeadOutputs], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id in sorted(outputs):
            ho = outputs[frame_id]
            record: dict = {"frame_id": frame_id}
            if ho.rpn is not None:
                record["rpn"] = {
                    "scores": np.asarray(ho.rpn.scores).tolist(),
                    "deltas": np.asarray(ho.rpn.deltas).tolist(),
                }
            if ho.stages:
                record["stages"] = [
                    {
                        "class_scores": np.asarray(s.class_scores).tolist(),
                        "deltas": np.asarray(s.deltas).tolist(),
                        "class_ids": list(s.class_ids),
                    }
                    for s in ho.stages
                ]
            if ho.one_stage is not None:
                record["one_stage"] = {
                    "class_scores": np.asarray(ho.one_stage.class_scores).tolist(),
                    "deltas": np.asarray(ho.one_stage.deltas).tolist(),
                    "class_ids": list(ho.one_stage.class_ids),
                }
            fh.write(json.dumps(record) + "\n")


def read_head_outputs(path: PathLike) -> Dict[int, HeadOutputs]:
    outputs: Dict[int, HeadOutputs] = {}
    for line_no, record in _iter_jsonl(path):
        _require(record, ("frame_id",), path, line_no)
        ho = HeadOutputs()
        if "rpn" in record:
            ho.rpn = RpnOutput(
                scores=_array(record["rpn"].get("scores"), path, line_no, "rpn.scores"),
                deltas=_array(record["rpn"].get("deltas"), path, line_no, "rpn.deltas"),
            )
        for s in record.get("stages", []):
            ho.stages.append(
                StageOutput(
                    class_scores=_array(s.get("class_scores"), path, line_no, "stage.class_scores"),
                    deltas=_array(s.get("deltas"), path, line_no, "stage.deltas"),
                    class_ids=tuple(int(c) for c in s.get("class_ids", ())),
                )
            )
        if "one_stage" in record:
            s = record["one_stage"]
            ho.one_stage = OneStageOutput(
                class_scores=_array(s.get("class_scores"), path, line_no, "one_stage.class_scores"),
                deltas=_array(s.get("deltas"), path, line_no, "one_stage.deltas"),
                class_ids=tuple(int(c) for c in s.get("class_ids", ())),
            )
        outputs[int(record["frame_id"])] = ho
    return outputs


def _from_mapping(cls, data: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"{what}: unknown keys {unknown}; valid keys: {sorted(names)}")
    return cls(**data)


def load_json_config(path: PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def scene_config_from_dict(data: dict) -> SceneConfig:
    data = dict(data)
    if "objects_per_frame" in data:
        data["objects_per_frame"] = tuple(data["objects_per_frame"])
    if "aspect_ratio_range" in data:
        data["aspect_ratio_range"] = tuple(data["aspect_ratio_range"])
    if "class_mix" in data and data["class_mix"] is not None:
        data["class_mix"] = {int(k): float(v) for k, v in data["class_mix"].items()}
    return _from_mapping(SceneConfig, data, "scene config")


def oracle_head_config_from_dict(data: dict) -> OracleHeadConfig:
    data = dict(data)
    if "delta_noise_std_per_stage" in data:
        data["delta_noise_std_per_stage"] = tuple(data["delta_noise_std_per_stage"])
    if "class_ids" in data:
        data["class_ids"] = tuple(data["class_ids"])
    return _from_mapping(OracleHeadConfig, data, "oracle head config")


def pipeline_config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    if "cascade" in data:
        cascade = data["cascade"]
        if isinstance(cascade, dict):
            cascade = cascade.get("stage_fg_thresholds", ())
        data["cascade"] = CascadeConfig(tuple(cascade))
    if "anchor_spec" in data:
        spec = dict(data["anchor_spec"])
        for key in ("aspect_ratios", "octave_scales"):
            if key in spec:
                spec[key] = tuple(spec[key])
        data["anchor_spec"] = _from_mapping(AnchorSpec, spec, "anchor spec")
    if "precision" in data:
        data["precision"] = PrecisionMode(data["precision"])
    return _from_mapping(PipelineConfig, data, "pipeline config")


def eval_config_from_dict(data: dict) -> EvalConfig:
    data = dict(data)
    if "iou_thresholds" in data:
        data["iou_thresholds"] = {int(k): float(v) for k, v in data["iou_thresholds"].items()}
    return _from_mapping(EvalConfig, data, "eval config")


def pipeline_config_to_dict(config: PipelineConfig) -> dict:
    return {
        "min_level": config.min_level,
        "max_level": config.max_level,
        "num_proposals": config.num_proposals,
        "rpn_nms_threshold": config.rpn_nms_threshold,
        "final_nms_threshold": config.final_nms_threshold,
        "cascade": {"stage_fg_thresholds": list(config.cascade.stage_fg_thresholds)},
        "score_threshold": config.score_threshold,
        "max_detections": config.max_detections,
        "precision": config.precision.value,
        "anchor_spec": {
            "aspect_ratios": list(config.anchor_spec.aspect_ratios),
            "octave_scales": list(config.anchor_spec.octave_scales),
            "base_size_multiplier": config.anchor_spec.base_size_multiplier,
        },
        "stage_score_mode": config.stage_score_mode,
    }


def scene_config_to_dict(config: SceneConfig) -> dict:
    return {
        "image_h": config.image_h,
        "image_w": config.image_w,
        "frames": config.frames,
        "objects_per_frame": list(config.objects_per_frame),
        "class_mix": {str(k): v for k, v in sorted(config.class_mix.items())},
        "size_log_mean": config.size_log_mean,
        "size_log_std": config.size_log_std,
        "min_edge": config.min_edge,
        "aspect_ratio_range": list(config.aspect_ratio_range),
        "crowd_cluster_prob": config.crowd_cluster_prob,
        "max_pairwise_iou": config.max_pairwise_iou,
        "l2_area_threshold": config.l2_area_threshold,
        "seed": config.seed,
    }


def oracle_head_config_to_dict(config: OracleHeadConfig) -> dict:
    return {
        "score_noise_std": config.score_noise_std,
        "delta_noise_std_per_stage": list(config.delta_noise_std_per_stage),
        "fp_rate": config.fp_rate,
        "min_visible_iou": config.min_visible_iou,
        "seed": config.seed,
        "class_ids": list(config.class_ids),
    }


def eval_config_to_dict(config: EvalConfig) -> dict:
    return {
        "iou_thresholds": {str(k): v for k, v in sorted(config.iou_thresholds.items())},
        "recall_points": config.recall_points,
    }
