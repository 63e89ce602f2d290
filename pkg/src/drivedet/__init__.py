"""Post-processing, evaluation and scaling analytics for anchor-based
driving-scene detectors: anchor pyramids, cascade refinement, NMS,
difficulty-bucketed AP, binary16 inference emulation, latency
benchmarking, and speed/accuracy frontier analysis over measured models.
"""

__version__ = "0.1.0"

from .anchors import (
    ONE_STAGE_ANCHOR_SPEC,
    RPN_ANCHOR_SPEC,
    AnchorPyramid,
    AnchorSpec,
    generate_pyramid,
    level_of_box,
)
from .bench import BenchStats, StageClock, measure
from .evaluation import (
    DEFAULT_IOU_THRESHOLDS,
    EvalConfig,
    EvalResult,
    average_precision,
    evaluate,
    match_detections,
)
from .geometry import (
    Box,
    BoxDelta,
    decode,
    decode_boxes,
    encode,
    encode_boxes,
    iou,
    iou_matrix,
)
from .matching import Assignment, CascadeConfig, StageQuality, assign, stage_quality
from .numeric import PrecisionMode, round_f16, with_precision
from .pipeline import (
    FileHead,
    Head,
    HeadOutputs,
    PipelineConfig,
    RecordingHead,
    TwoStageResult,
    detect_frames,
    rpn_proposals,
    run_one_stage,
    run_two_stage,
)
from .scaling import (
    DominanceFact,
    Framework,
    ModelRecord,
    best_under_latency,
    dominates,
    load_registry,
    pareto_frontier,
    scaling_comparison,
)
from .scene import CLASS_NAMES, Detection, Difficulty, Frame, GroundTruth
from .suppression import ScoredBox, greedy_nms, nms_indices, nms_oracle, per_class_nms, top_k
from .synth import (
    OracleHead,
    OracleHeadConfig,
    SceneConfig,
    benchmark_scene_config,
    expected_l2_fraction,
    generate_scenes,
)
