"""Command-line entry point.

Subcommands::

    synth    generate a synthetic scene set (scenes JSONL)
    detect   run the inference pipeline over scenes (detections JSONL
             + stage diagnostics, optional head-output recording/replay)
    eval     score detections against scenes (metrics JSON)
    ablate   run the improvement ladder end to end (delta table)
    pareto   registry analytics: frontier CSV + latency-budget selection
    bench    wall-clock latency stats for a pipeline configuration

Every run writes a manifest JSON next to its primary output with the
resolved configs, seeds and paths needed to reproduce it byte for byte.
The default worker count honors the DRIVEDET_JOBS environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__, bench, formats, scaling
from .evaluation import EvalConfig, evaluate
from .matching import stage_quality
from .pipeline import (
    FileHead,
    Head,
    PipelineConfig,
    RecordingHead,
    TwoStageResult,
    detect_frames,
)
from .scene import Frame
from .synth import OracleHead, OracleHeadConfig, SceneConfig, benchmark_scene_config, generate_scenes

_JOBS_ENV = "DRIVEDET_JOBS"


def _default_jobs() -> int:
    value = os.environ.get(_JOBS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_manifest(
    command: str,
    argv: List[str],
    primary_output: Path,
    configs: dict,
    inputs: Dict[str, str],
    outputs: Dict[str, str],
    manifest_path: Optional[str] = None,
) -> Path:
    path = Path(manifest_path) if manifest_path else Path(str(primary_output) + ".manifest.json")
    _write_json(
        path,
        {
            "tool": "drivedet",
            "version": __version__,
            "command": command,
            "argv": list(argv),
            "configs": configs,
            "inputs": inputs,
            "outputs": outputs,
        },
    )
    return path


def _load_scene_config(args) -> SceneConfig:
    data = formats.load_json_config(args.scene_config) if args.scene_config else {}
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "frames", None) is not None:
        data["frames"] = args.frames
    return formats.scene_config_from_dict(data)


def _load_pipeline_config(args) -> PipelineConfig:
    data = formats.load_json_config(args.pipeline_config) if args.pipeline_config else {}
    if getattr(args, "precision", None):
        data["precision"] = args.precision
    return formats.pipeline_config_from_dict(data)


def _load_head_config(args) -> OracleHeadConfig:
    data = formats.load_json_config(args.head_config) if args.head_config else {}
    if getattr(args, "head_seed", None) is not None:
        data["seed"] = args.head_seed
    return formats.oracle_head_config_from_dict(data)


def _build_head(args, head_config: OracleHeadConfig) -> Head:
    if args.head == "replay":
        if not args.replay:
            raise ValueError("--head replay requires --replay PATH")
        return FileHead(formats.read_head_outputs(args.replay))
    return OracleHead(head_config)


def cmd_synth(args, argv: List[str]) -> int:
    config = _load_scene_config(args)
    frames = generate_scenes(config)
    out = Path(args.out)
    formats.write_scenes(frames, out)
    formats.read_scenes(out)  # validate what we wrote
    _write_manifest(
        "synth",
        argv,
        out,
        {"scene": formats.scene_config_to_dict(config)},
        {},
        {"scenes": str(out)},
        args.manifest,
    )
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def _stage_diagnostics(frames: List[Frame], results: List[TwoStageResult], config: PipelineConfig) -> dict:
    per_frame = []
    n_stages = config.cascade.num_stages
    sums = [0.0] * n_stages
    for frame, result in zip(frames, results):
        stages = []
        gt_boxes = [g.box for g in frame.gts]
        for s, boxes in enumerate(result.per_stage_boxes):
            q = stage_quality(boxes, gt_boxes, config.cascade)
            sums[s] += q.mean_matched_iou
            stages.append(
                {
                    "mean_matched_iou": q.mean_matched_iou,
                    "matched_count": q.matched_count,
                    "fg_fractions": list(q.fg_fractions),
                }
            )
        per_frame.append({"frame_id": frame.frame_id, "stages": stages})
    n = max(len(frames), 1)
    return {
        "mean_matched_iou_per_stage": [s / n for s in sums],
        "frames": per_frame,
    }


def cmd_detect(args, argv: List[str]) -> int:
    frames = formats.read_scenes(args.scenes)
    config = _load_pipeline_config(args)
    head_config = _load_head_config(args)
    head = _build_head(args, head_config)
    recorder = None
    jobs = args.jobs
    if args.record_head:
        recorder = RecordingHead(head)
        head = recorder
        jobs = 1  # recording requires deterministic stage order
    results = detect_frames(frames, head, config, one_stage=args.one_stage, jobs=jobs)

    out = Path(args.out)
    outputs = {"detections": str(out)}
    if args.one_stage:
        detections = [d for per_frame in results for d in per_frame]
    else:
        detections = [d for r in results for d in r.detections]
    formats.write_detections(detections, out)
    formats.read_detections(out)

    if not args.one_stage:
        diag_path = Path(args.diagnostics) if args.diagnostics else Path(str(out) + ".diagnostics.json")
        _write_json(diag_path, _stage_diagnostics(frames, results, config))
        outputs["diagnostics"] = str(diag_path)
    if recorder is not None:
        replay_path = Path(args.record_head)
        formats.write_head_outputs(recorder.recorded, replay_path)
        formats.read_head_outputs(replay_path)
        outputs["head_outputs"] = str(replay_path)

    configs = {
        "pipeline": formats.pipeline_config_to_dict(config),
        "head": formats.oracle_head_config_to_dict(head_config) if args.head == "oracle" else {"replay": args.replay},
        "one_stage": args.one_stage,
    }
    _write_manifest("detect", argv, out, configs, {"scenes": args.scenes}, outputs, args.manifest)
    print(f"wrote {len(detections)} detections to {out}")
    return 0


def cmd_eval(args, argv: List[str]) -> int:
    dets = formats.read_detections(args.detections)
    frames = formats.read_scenes(args.scenes)
    gts = [g for f in frames for g in f.gts]
    data = formats.load_json_config(args.eval_config) if args.eval_config else {}
    config = formats.eval_config_from_dict(data)
    result = evaluate(dets, gts, config)
    out = Path(args.out)
    payload = result.to_dict()
    payload["num_detections"] = len(dets)
    payload["num_ground_truths"] = len(gts)
    _write_json(out, payload)
    _write_manifest(
        "eval",
        argv,
        out,
        {"eval": formats.eval_config_to_dict(config)},
        {"detections": args.detections, "scenes": args.scenes},
        {"metrics": str(out)},
        args.manifest,
    )
    ap_l1 = payload["ap_l1"]
    ap_l2 = payload["ap_l2"]
    print(f"ap_l1={ap_l1} ap_l2={ap_l2}")
    return 0


# The improvement ladder: each rung applies one more change on top of the
# previous configuration (the conv-free head redesign is a neural change
# with no post-processing analogue here, so it has no rung).
ABLATION_LADDER = (
    ("baseline", dict(cascade=(0.5,), min_level=3, max_level=7, num_proposals=1000,
                      rpn_nms_threshold=0.5, final_nms_threshold=0.5, precision="full")),
    ("+cascade_3_heads", dict(cascade=(0.5, 0.6, 0.7))),
    ("+l2_l6_features", dict(min_level=2, max_level=6)),
    ("+512_proposals", dict(num_proposals=512)),
    ("+nms_0.7", dict(rpn_nms_threshold=0.7, final_nms_threshold=0.7)),
    ("+float16", dict(precision="half_emulated")),
)


def ablation_configs() -> List:
    """Cumulative (name, PipelineConfig) rungs of the improvement ladder."""
    rungs = []
    current: dict = {}
    for name, changes in ABLATION_LADDER:
        current.update(changes)
        rungs.append((name, formats.pipeline_config_from_dict(dict(current))))
    return rungs


def cmd_ablate(args, argv: List[str]) -> int:
    scene_config = _load_scene_config(args)
    if args.scene_config is None and args.seed is not None:
        scene_config = benchmark_scene_config(args.seed, frames=args.frames or 40)
    head_config = _load_head_config(args)
    if args.head_seed is None and args.seed is not None:
        head_config = formats.oracle_head_config_from_dict(
            {**formats.oracle_head_config_to_dict(head_config), "seed": args.seed}
        )
    frames = generate_scenes(scene_config)
    gts = [g for f in frames for g in f.gts]
    eval_config = EvalConfig()

    rows = []
    previous_ap = None
    for name, config in ablation_configs():
        head = OracleHead(head_config)
        results = detect_frames(frames, head, config, jobs=args.jobs)
        detections = [d for r in results for d in r.detections]
        metrics = evaluate(detections, gts, eval_config)
        row = {
            "name": name,
            "ap_l1": metrics.ap_l1,
            "ap_l2": metrics.ap_l2,
            "delta_ap_l1": None if previous_ap is None else metrics.ap_l1 - previous_ap,
            "num_detections": len(detections),
        }
        if args.measure_latency:
            stats = bench.measure(
                lambda clock: detect_frames(frames, OracleHead(head_config), config, clock=clock),
                warmup=args.warmup,
                iterations=args.iterations,
            )
            row["latency_ms"] = stats.total.mean_ms
        previous_ap = metrics.ap_l1
        rows.append(row)

    out = Path(args.out)
    _write_json(
        out,
        {
            "rows": rows,
            "scene": formats.scene_config_to_dict(scene_config),
            "head": formats.oracle_head_config_to_dict(head_config),
        },
    )
    _write_manifest(
        "ablate",
        argv,
        out,
        {
            "scene": formats.scene_config_to_dict(scene_config),
            "head": formats.oracle_head_config_to_dict(head_config),
            "measure_latency": args.measure_latency,
        },
        {},
        {"table": str(out)},
        args.manifest,
    )
    name_w = max(len(r["name"]) for r in rows)
    header = f"{'rung':<{name_w}}  {'ap_l1':>7}  {'ap_l2':>7}  {'delta':>7}"
    if args.measure_latency:
        header += f"  {'ms':>8}"
    print(header)
    for r in rows:
        delta = "" if r["delta_ap_l1"] is None else f"{100 * r['delta_ap_l1']:+7.2f}"
        line = f"{r['name']:<{name_w}}  {100 * r['ap_l1']:7.2f}  {100 * r['ap_l2']:7.2f}  {delta:>7}"
        if args.measure_latency:
            line += f"  {r['latency_ms']:8.2f}"
        print(line)
    return 0


def cmd_pareto(args, argv: List[str]) -> int:
    records = scaling.load_registry(args.registry)
    if args.framework:
        wanted = scaling.Framework.parse(args.framework)
        records = [r for r in records if r.framework == wanted]
    if not records:
        raise ValueError("registry selection is empty")
    frontier = scaling.pareto_frontier(records)
    outputs = {}
    frontier_out = Path(args.frontier_out)
    with open(frontier_out, "w", encoding="utf-8") as fh:
        scaling.write_registry(frontier, fh)
    scaling.load_registry(frontier_out)
    outputs["frontier"] = str(frontier_out)

    selection_payload = None
    if args.budget_ms is not None:
        chosen = scaling.best_under_latency(records, args.budget_ms)
        selection_payload = {
            "budget_ms": args.budget_ms,
            "selected": {
                "framework": chosen.framework.value,
                "backbone": chosen.backbone,
                "input_h": chosen.input_h,
                "input_w": chosen.input_w,
                "latency_ms": chosen.latency_ms,
                "ap_l1": chosen.ap_l1,
                "ap_l2": chosen.ap_l2,
            },
        }
        if args.selection_out:
            selection_out = Path(args.selection_out)
            _write_json(selection_out, selection_payload)
            outputs["selection"] = str(selection_out)
    _write_manifest(
        "pareto",
        argv,
        frontier_out,
        {"framework": args.framework, "budget_ms": args.budget_ms},
        {"registry": args.registry or "<embedded>"},
        outputs,
        args.manifest,
    )
    print(f"frontier: {len(frontier)} of {len(records)} records -> {frontier_out}")
    if selection_payload:
        sel = selection_payload["selected"]
        label = sel["backbone"]
        if sel["input_h"]:
            label += f" @{sel['input_h']}x{sel['input_w']}"
        print(
            f"best under {args.budget_ms:g} ms: {label} "
            f"({sel['latency_ms']:g} ms) ap_l1/ap_l2 = {sel['ap_l1']:g}/{sel['ap_l2']:g}"
        )
    return 0


def cmd_bench(args, argv: List[str]) -> int:
    frames = formats.read_scenes(args.scenes)
    config = _load_pipeline_config(args)
    head_config = _load_head_config(args)

    def run(clock):
        detect_frames(
            frames,
            OracleHead(head_config),
            config,
            one_stage=args.one_stage,
            jobs=args.jobs,
            clock=clock,
        )

    stats = bench.measure(run, warmup=args.warmup, iterations=args.iterations)
    out = Path(args.out)
    payload = stats.to_dict(include_raw=False)
    payload["n_frames"] = len(frames)
    payload["pipeline"] = formats.pipeline_config_to_dict(config)
    payload["jobs"] = args.jobs
    _write_json(out, payload)
    outputs = {"stats": str(out)}
    if args.samples_out:
        samples_out = Path(args.samples_out)
        with open(samples_out, "w", encoding="utf-8") as fh:
            fh.write("iteration,name,ms\n")
            for i, ms in enumerate(stats.raw_total_ms):
                fh.write(f"{i},total,{ms!r}\n")
            for name in sorted(stats.raw_stage_ms):
                for i, ms in enumerate(stats.raw_stage_ms[name]):
                    fh.write(f"{i},{name},{ms!r}\n")
        outputs["samples"] = str(samples_out)
    _write_manifest(
        "bench",
        argv,
        out,
        {
            "pipeline": formats.pipeline_config_to_dict(config),
            "head": formats.oracle_head_config_to_dict(head_config),
            "warmup": args.warmup,
            "iterations": args.iterations,
            "jobs": args.jobs,
            "one_stage": args.one_stage,
        },
        {"scenes": args.scenes},
        outputs,
        args.manifest,
    )
    print(
        f"total: mean {stats.total.mean_ms:.2f} ms, p50 {stats.total.p50_ms:.2f} ms, "
        f"p90 {stats.total.p90_ms:.2f} ms over {stats.n_iterations} iterations"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivedet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"drivedet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--out", required=True, help="output scenes JSONL")
    p.add_argument("--scene-config", help="JSON file with SceneConfig fields")
    p.add_argument("--seed", type=int, help="override scene seed")
    p.add_argument("--frames", type=int, help="override frame count")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="run the inference pipeline")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="output detections JSONL")
    p.add_argument("--pipeline-config", help="JSON file with PipelineConfig fields")
    p.add_argument("--precision", choices=["full", "half_emulated"], help="override precision mode")
    p.add_argument("--head", choices=["oracle", "replay"], default="oracle")
    p.add_argument("--head-config", help="JSON file with OracleHeadConfig fields")
    p.add_argument("--head-seed", type=int, help="override oracle head seed")
    p.add_argument("--replay", help="recorded head outputs JSONL (for --head replay)")
    p.add_argument("--record-head", help="record head outputs to this JSONL (forces --jobs 1)")
    p.add_argument("--one-stage", action="store_true", help="run the one-stage pipeline")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--diagnostics", help="stage diagnostics path (default: <out>.diagnostics.json)")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against scenes")
    p.add_argument("--detections", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.add_argument("--eval-config", help="JSON file with EvalConfig fields")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the improvement ladder")
    p.add_argument("--out", required=True, help="output delta-table JSON")
    p.add_argument("--seed", type=int, default=0, help="benchmark seed (scenes + head)")
    p.add_argument("--frames", type=int, help="benchmark frame count")
    p.add_argument("--scene-config", help="JSON file with SceneConfig fields")
    p.add_argument("--head-config", help="JSON file with OracleHeadConfig fields")
    p.add_argument("--head-seed", type=int, help="override oracle head seed")
    p.add_argument("--measure-latency", action="store_true",
                   help="time each rung (makes the output non-repeatable)")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pareto", help="registry frontier and budget selection")
    p.add_argument("--registry", help="registry CSV (default: embedded measurements)")
    p.add_argument("--framework", help="filter: crcnn_rs, retinanet_rs or external")
    p.add_argument("--budget-ms", type=float, help="latency budget for selection")
    p.add_argument("--frontier-out", default="frontier.csv")
    p.add_argument("--selection-out", help="selection JSON path")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("bench", help="latency statistics for a configuration")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="output stats JSON")
    p.add_argument("--samples-out", help="raw per-iteration samples CSV")
    p.add_argument("--pipeline-config")
    p.add_argument("--precision", choices=["full", "half_emulated"])
    p.add_argument("--head-config")
    p.add_argument("--head-seed", type=int)
    p.add_argument("--one-stage", action="store_true")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bench)
    return parser


def run_command(argv: List[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
