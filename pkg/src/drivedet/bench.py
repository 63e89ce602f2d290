"""Wall-clock latency harness: warmup, repetition, per-stage timing.

The run closure receives a :class:`StageClock`; pipeline functions open
named spans on it so per-stage time is attributed without altering
results. Absolute milliseconds depend on the host; the harness is meant
for relative and directional comparisons, and raw samples are kept so
any summary can be audited.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np


class StageClock:
    """Accumulates named monotonic-clock spans for one pipeline run."""

    def __init__(self) -> None:
        self.spans: Dict[str, float] = {}

    @contextmanager
    def span(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.spans[name] = self.spans.get(name, 0.0) + (time.perf_counter() - start)

    def reset(self) -> None:
        self.spans.clear()


@dataclass(frozen=True)
class StatSummary:
    mean_ms: float
    p50_ms: float
    p90_ms: float
    std_ms: float
    min_ms: float
    max_ms: float

    @classmethod
    def from_samples(cls, samples_ms: List[float]) -> "StatSummary":
        arr = np.asarray(samples_ms, dtype=np.float64)
        return cls(
            mean_ms=float(arr.mean()),
            p50_ms=float(np.percentile(arr, 50)),
            p90_ms=float(np.percentile(arr, 90)),
            std_ms=float(arr.std()),
            min_ms=float(arr.min()),
            max_ms=float(arr.max()),
        )

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "p50_ms": self.p50_ms,
            "p90_ms": self.p90_ms,
            "std_ms": self.std_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
        }


@dataclass(frozen=True)
class BenchStats:
    total: StatSummary
    stages: Dict[str, StatSummary]
    n_iterations: int
    raw_total_ms: Tuple[float, ...] = field(repr=False)
    raw_stage_ms: Dict[str, Tuple[float, ...]] = field(repr=False)

    def to_dict(self, include_raw: bool = False) -> dict:
        out = {
            "n_iterations": self.n_iterations,
            "total": self.total.to_dict(),
            "stages": {name: s.to_dict() for name, s in sorted(self.stages.items())},
        }
        if include_raw:
            out["raw_total_ms"] = list(self.raw_total_ms)
            out["raw_stage_ms"] = {k: list(v) for k, v in sorted(self.raw_stage_ms.items())}
        return out


def measure(
    run: Callable[[StageClock], object],
    warmup: int = 10,
    iterations: int = 50,
) -> BenchStats:
    """Time ``run`` on identical input: warmup untimed, then measured reps."""
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    for i in range(warmup):
        try:
            run(StageClock())
        except Exception as exc:
            raise RuntimeError(f"benchmark closure failed during warmup {i}") from exc
    totals: List[float] = []
    per_stage: Dict[str, List[float]] = {}
    for i in range(iterations):
        clock = StageClock()
        start = time.perf_counter()
        try:
            run(clock)
        except Exception as exc:
            raise RuntimeError(f"benchmark closure failed at iteration {i}") from exc
        totals.append((time.perf_counter() - start) * 1e3)
        for name, seconds in clock.spans.items():
            per_stage.setdefault(name, [0.0] * i).append(seconds * 1e3)
        for name, values in per_stage.items():
            if len(values) < i + 1:
                values.append(0.0)
    return BenchStats(
        total=StatSummary.from_samples(totals),
        stages={name: StatSummary.from_samples(v) for name, v in per_stage.items()},
        n_iterations=iterations,
        raw_total_ms=tuple(totals),
        raw_stage_ms={name: tuple(v) for name, v in per_stage.items()},
    )
