"""Model-scaling analytics over measured (latency, accuracy) records.

The registry holds one row per benchmarked model configuration. The
embedded fixture ships the published measurements for the CRCNN-RS and
RetinaNet-RS model families on the WOD real-time 2D detection task
(V100, TensorRT float16) plus the top leaderboard entries they were
compared against.

Dominance is judged on (latency_ms down, ap_l1 up): a record is dominated
if another has latency <= and ap_l1 >= with at least one strict. ap_l2 is
reported but takes no part in dominance, matching the headline metric.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, List, Optional, Sequence, Union

EMBEDDED_REGISTRY = "wod_models.csv"

REGISTRY_HEADER = [
    "framework",
    "backbone",
    "input_h",
    "input_w",
    "params_m",
    "flops_b",
    "latency_ms",
    "ap_l1",
    "ap_l2",
    "flag",
]


class Framework(enum.Enum):
    CRCNN_RS = "crcnn_rs"
    RETINANET_RS = "retinanet_rs"
    EXTERNAL = "external"  # leaderboard entries from other teams

    @classmethod
    def parse(cls, text: str) -> "Framework":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown framework {text!r}; expected one of "
                f"{[f.value for f in cls]}"
            ) from None


@dataclass(frozen=True)
class ModelRecord:
    framework: Framework
    backbone: str
    input_h: Optional[int]
    input_w: Optional[int]
    params_m: Optional[float]
    flops_b: Optional[float]
    latency_ms: float
    ap_l1: float
    ap_l2: float
    flag: str = ""

    def __post_init__(self) -> None:
        if self.latency_ms <= 0:
            raise ValueError(f"latency_ms must be positive, got {self.latency_ms}")
        for name in ("ap_l1", "ap_l2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0):
                raise ValueError(f"{name} must lie in [0, 100], got {v}")
        if (self.input_h is None) != (self.input_w is None):
            raise ValueError("input_h and input_w must be given together")
        if self.input_h is not None and (self.input_h <= 0 or self.input_w <= 0):
            raise ValueError(f"input resolution must be positive, got {self.input_h}x{self.input_w}")

    @property
    def label(self) -> str:
        if self.input_h is None:
            return self.backbone
        return f"{self.backbone} @{self.input_h}x{self.input_w}"

    def to_row(self) -> List[str]:
        def fmt(v) -> str:
            return "" if v is None else (f"{v:g}" if isinstance(v, float) else str(v))

        return [
            self.framework.value,
            self.backbone,
            fmt(self.input_h),
            fmt(self.input_w),
            fmt(self.params_m),
            fmt(self.flops_b),
            fmt(self.latency_ms),
            fmt(self.ap_l1),
            fmt(self.ap_l2),
            self.flag,
        ]


def _parse_optional_int(text: str, what: str, line_no: int) -> Optional[int]:
    text = text.strip()
    if not text:
        return None
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"line {line_no}: {what} must be an integer, got {text!r}") from None


def _parse_optional_float(text: str, what: str, line_no: int) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"line {line_no}: {what} must be a number, got {text!r}") from None


def _parse_float(text: str, what: str, line_no: int) -> float:
    v = _parse_optional_float(text, what, line_no)
    if v is None:
        raise ValueError(f"line {line_no}: {what} is required")
    return v


def load_registry(source: Union[None, str, Path, IO[str]] = None) -> List[ModelRecord]:
    """Parse a registry CSV; ``None`` loads the embedded fixture.

    Lines starting with ``#`` are commentary. Errors carry line numbers.
    """
    if source is None:
        text = resources.files("drivedet.data").joinpath(EMBEDDED_REGISTRY).read_text()
    elif isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()

    records: List[ModelRecord] = []
    header_seen = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader(io.StringIO(raw)))
        row = [c.strip() for c in row]
        if not header_seen:
            if row != REGISTRY_HEADER:
                raise ValueError(
                    f"line {line_no}: header must be {','.join(REGISTRY_HEADER)}, "
                    f"got {','.join(row)}"
                )
            header_seen = True
            continue
        if len(row) != len(REGISTRY_HEADER):
            raise ValueError(
                f"line {line_no}: expected {len(REGISTRY_HEADER)} fields, got {len(row)}"
            )
        try:
            record = ModelRecord(
                framework=Framework.parse(row[0]),
                backbone=row[1],
                input_h=_parse_optional_int(row[2], "input_h", line_no),
                input_w=_parse_optional_int(row[3], "input_w", line_no),
                params_m=_parse_optional_float(row[4], "params_m", line_no),
                flops_b=_parse_optional_float(row[5], "flops_b", line_no),
                latency_ms=_parse_float(row[6], "latency_ms", line_no),
                ap_l1=_parse_float(row[7], "ap_l1", line_no),
                ap_l2=_parse_float(row[8], "ap_l2", line_no),
                flag=row[9],
            )
        except ValueError as exc:
            if str(exc).startswith("line "):
                raise
            raise ValueError(f"line {line_no}: {exc}") from None
        records.append(record)
    if not header_seen:
        raise ValueError("registry is empty: missing header line")
    return records


def write_registry(records: Sequence[ModelRecord], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(REGISTRY_HEADER)
    for r in records:
        writer.writerow(r.to_row())


def dominates(a: ModelRecord, b: ModelRecord, latency_tolerance_ms: float = 0.0) -> bool:
    """True if ``a`` dominates ``b`` on (latency, ap_l1).

    With a tolerance, ``a`` may be up to that much slower and still count,
    which expresses matched-latency comparisons; strictness is judged on
    the raw values.
    """
    if a.latency_ms > b.latency_ms + latency_tolerance_ms or a.ap_l1 < b.ap_l1:
        return False
    return a.latency_ms < b.latency_ms or a.ap_l1 > b.ap_l1


def pareto_frontier(records: Sequence[ModelRecord]) -> List[ModelRecord]:
    """Records not strictly dominated, sorted by latency.

    Sweep over latency groups: a record is dominated iff some strictly
    faster record has ap_l1 >= its own, or an equal-latency record has
    strictly higher ap_l1. Duplicate records survive together.
    """
    if not records:
        raise ValueError("pareto_frontier requires at least one record")
    order = sorted(range(len(records)), key=lambda i: (records[i].latency_ms, -records[i].ap_l1))
    kept: List[int] = []
    best_faster = float("-inf")  # max ap_l1 among strictly lower latencies
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and records[order[j]].latency_ms == records[order[i]].latency_ms:
            j += 1
        group = order[i:j]
        group_best = max(records[k].ap_l1 for k in group)
        for k in group:
            ap = records[k].ap_l1
            # A strictly faster record with equal ap_l1 already dominates.
            if ap > best_faster and ap >= group_best:
                kept.append(k)
        best_faster = max(best_faster, group_best)
        i = j
    kept.sort(key=lambda k: (records[k].latency_ms, -records[k].ap_l1, k))
    return [records[k] for k in kept]


def best_under_latency(records: Sequence[ModelRecord], budget_ms: float) -> ModelRecord:
    """Highest-ap_l1 record within the latency budget; ties favor speed."""
    feasible = [r for r in records if r.latency_ms <= budget_ms]
    if not feasible:
        fastest = min((r.latency_ms for r in records), default=float("nan"))
        raise ValueError(
            f"no record within {budget_ms} ms (fastest available: {fastest} ms)"
        )
    return min(feasible, key=lambda r: (-r.ap_l1, r.latency_ms))


@dataclass(frozen=True)
class DominanceFact:
    dominated: ModelRecord
    dominator: ModelRecord

    @property
    def ap_gap(self) -> float:
        return self.dominator.ap_l1 - self.dominated.ap_l1

    @property
    def latency_gap_ms(self) -> float:
        return self.dominated.latency_ms - self.dominator.latency_ms


def scaling_comparison(
    records: Sequence[ModelRecord],
    backbone_a: str,
    backbone_b: str,
    framework_a: Optional[Framework] = None,
    framework_b: Optional[Framework] = None,
    latency_tolerance_ms: float = 0.0,
) -> List[DominanceFact]:
    """Cross-group dominance facts between two backbone selections.

    Each fact says one group's record is dominated by a record of the
    other group (both directions are reported). Records of the same
    (backbone, framework) family are never compared, so comparing a
    selection to itself yields no facts. Groups must each cover at least
    two input resolutions.
    """

    def group(backbone: str, framework: Optional[Framework]) -> List[int]:
        idx = [
            i
            for i, r in enumerate(records)
            if r.backbone == backbone and (framework is None or r.framework == framework)
        ]
        if not idx:
            known = sorted({r.backbone for r in records})
            raise ValueError(f"unknown backbone {backbone!r}; registry has {known}")
        resolutions = {(records[i].input_h, records[i].input_w) for i in idx}
        if len(resolutions) < 2:
            raise ValueError(
                f"backbone {backbone!r} must appear at >= 2 resolutions, found {len(resolutions)}"
            )
        return idx

    group_a = group(backbone_a, framework_a)
    group_b = group(backbone_b, framework_b)
    facts = {}
    for dominated_group, dominator_group in ((group_a, group_b), (group_b, group_a)):
        for i in dominated_group:
            for j in dominator_group:
                ri, rj = records[i], records[j]
                if ri.backbone == rj.backbone and ri.framework == rj.framework:
                    continue
                if dominates(rj, ri, latency_tolerance_ms):
                    facts[(i, j)] = DominanceFact(dominated=ri, dominator=rj)
    ordered = sorted(facts.items(), key=lambda kv: (kv[1].dominated.latency_ms, kv[0]))
    return [f for _, f in ordered]
