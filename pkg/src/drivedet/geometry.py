"""Axis-aligned box algebra: IoU, clipping, and anchor-relative encoding.

Coordinate convention used across the package:

* corners are ``(ymin, xmin, ymax, xmax)`` in continuous pixel units,
* area is half-open, ``(ymax - ymin) * (xmax - xmin)``, no +1 correction,
* bulk operations work on float64 arrays of shape ``(N, 4)`` with the
  same column order.

Box regression uses the standard center/log-size parameterization:
``ty = (cy_t - cy_a) / h_a``, ``th = log(h_t / h_a)`` (same for x/w).
Decoded log-sizes are clamped at ``log(1000 / 16)`` to guard ``exp``
overflow on unbounded regression outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

# Largest decodable log-size delta; boxes cannot grow more than 1000/16 x.
SIZE_LOG_CLAMP = math.log(1000.0 / 16.0)

BoxesLike = Union[np.ndarray, Sequence["Box"]]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle, corners in pixels."""

    ymin: float
    xmin: float
    ymax: float
    xmax: float

    def __post_init__(self) -> None:
        if not (self.ymax >= self.ymin and self.xmax >= self.xmin):
            raise ValueError(
                f"invalid box: need ymax >= ymin and xmax >= xmin, got "
                f"({self.ymin}, {self.xmin}, {self.ymax}, {self.xmax})"
            )

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def area(self) -> float:
        return self.height * self.width

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.ymin + self.ymax), 0.5 * (self.xmin + self.xmax))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.ymin, self.xmin, self.ymax, self.xmax)


@dataclass(frozen=True)
class BoxDelta:
    """Anchor-relative regression target (dimensionless)."""

    ty: float
    tx: float
    th: float
    tw: float

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.ty, self.tx, self.th, self.tw)


def to_array(boxes: BoxesLike) -> np.ndarray:
    """Convert Box sequence (or pass through an array) to float64 ``(N, 4)``."""
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=np.float64)
        if arr.size == 0:
            return arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"box array must have shape (N, 4), got {arr.shape}")
        return arr
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def from_array(arr: np.ndarray) -> list:
    """Inverse of :func:`to_array`."""
    return [Box(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in np.asarray(arr).reshape(-1, 4)]


def box_areas(arr: np.ndarray) -> np.ndarray:
    arr = to_array(arr)
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def clip_boxes(arr: np.ndarray, height: float, width: float) -> np.ndarray:
    """Clip boxes into ``[0, height] x [0, width]``."""
    arr = to_array(arr)
    out = np.empty_like(arr)
    out[:, 0] = np.clip(arr[:, 0], 0.0, height)
    out[:, 2] = np.clip(arr[:, 2], 0.0, height)
    out[:, 1] = np.clip(arr[:, 1], 0.0, width)
    out[:, 3] = np.clip(arr[:, 3], 0.0, width)
    return out


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes.

    Symmetric, in [0, 1]; returns 0.0 for disjoint or degenerate
    (zero-area) inputs, never NaN.
    """
    inter_h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if inter_h <= 0.0:
        return 0.0
    inter_w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    if inter_w <= 0.0:
        return 0.0
    inter = inter_h * inter_w
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: BoxesLike, b: BoxesLike) -> np.ndarray:
    """Pairwise IoU matrix of shape ``(len(a), len(b))``.

    Empty inputs give an empty matrix of the right shape.
    """
    arr_a = to_array(a)
    arr_b = to_array(b)
    if arr_a.shape[0] == 0 or arr_b.shape[0] == 0:
        return np.zeros((arr_a.shape[0], arr_b.shape[0]), dtype=np.float64)
    inter_h = np.minimum(arr_a[:, None, 2], arr_b[None, :, 2]) - np.maximum(
        arr_a[:, None, 0], arr_b[None, :, 0]
    )
    inter_w = np.minimum(arr_a[:, None, 3], arr_b[None, :, 3]) - np.maximum(
        arr_a[:, None, 1], arr_b[None, :, 1]
    )
    inter = np.clip(inter_h, 0.0, None) * np.clip(inter_w, 0.0, None)
    union = box_areas(arr_a)[:, None] + box_areas(arr_b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def _require_positive_sizes(arr: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    h = arr[:, 2] - arr[:, 0]
    w = arr[:, 3] - arr[:, 1]
    if np.any(h <= 0.0) or np.any(w <= 0.0):
        bad = int(np.flatnonzero((h <= 0.0) | (w <= 0.0))[0])
        raise ValueError(f"{what} must have strictly positive height and width (row {bad})")
    return h, w


def encode(target: Box, anchor: Box) -> BoxDelta:
    """Encode ``target`` relative to ``anchor`` as center/log-size deltas."""
    d = encode_boxes(to_array([target]), to_array([anchor]))[0]
    return BoxDelta(float(d[0]), float(d[1]), float(d[2]), float(d[3]))


def encode_boxes(targets: BoxesLike, anchors: BoxesLike) -> np.ndarray:
    """Vectorized :func:`encode` over aligned ``(N, 4)`` arrays."""
    t = to_array(targets)
    a = to_array(anchors)
    if t.shape != a.shape:
        raise ValueError(f"targets and anchors must align, got {t.shape} vs {a.shape}")
    ha, wa = _require_positive_sizes(a, "anchors")
    ht, wt = _require_positive_sizes(t, "targets")
    cya = a[:, 0] + 0.5 * ha
    cxa = a[:, 1] + 0.5 * wa
    cyt = t[:, 0] + 0.5 * ht
    cxt = t[:, 1] + 0.5 * wt
    return np.stack(
        [(cyt - cya) / ha, (cxt - cxa) / wa, np.log(ht / ha), np.log(wt / wa)], axis=1
    )


def decode(delta: BoxDelta, anchor: Box, clip_to: Optional[Tuple[float, float]] = None) -> Box:
    """Invert :func:`encode`; optionally clip into ``[0, h] x [0, w]``."""
    d = np.array([delta.as_tuple()], dtype=np.float64)
    out = decode_boxes(d, to_array([anchor]), clip_to=clip_to)[0]
    return Box(float(out[0]), float(out[1]), float(out[2]), float(out[3]))


def decode_boxes(
    deltas: np.ndarray,
    anchors: BoxesLike,
    clip_to: Optional[Tuple[float, float]] = None,
    quantize: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """Vectorized :func:`decode` over aligned ``(N, 4)`` arrays.

    ``quantize`` is an optional value-rounding hook applied at the declared
    intermediate points (inputs, anchor sizes/centers, output centers/sizes,
    output corners); it is how reduced-precision inference is emulated.
    Clipping happens after the final quantization step so clipped boxes are
    exactly within bounds.
    """
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    a = to_array(anchors)
    if d.shape[0] != a.shape[0]:
        raise ValueError(f"deltas and anchors must align, got {d.shape[0]} vs {a.shape[0]}")
    q = quantize if quantize is not None else (lambda v: v)
    d = q(d)
    a = q(a)
    ha, wa = _require_positive_sizes(a, "anchors")
    ha, wa = q(ha), q(wa)
    cya = q(a[:, 0] + 0.5 * ha)
    cxa = q(a[:, 1] + 0.5 * wa)
    th = np.minimum(d[:, 2], SIZE_LOG_CLAMP)
    tw = np.minimum(d[:, 3], SIZE_LOG_CLAMP)
    cy = q(d[:, 0] * ha + cya)
    cx = q(d[:, 1] * wa + cxa)
    h = q(np.exp(th) * ha)
    w = q(np.exp(tw) * wa)
    out = q(np.stack([cy - 0.5 * h, cx - 0.5 * w, cy + 0.5 * h, cx + 0.5 * w], axis=1))
    if clip_to is not None:
        out = clip_boxes(out, clip_to[0], clip_to[1])
    return out
