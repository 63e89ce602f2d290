"""Binary16 (IEEE 754 half) emulation for inference numeric paths.

The accuracy half of a float16 deployment claim is testable on CPU by
rounding values through binary16 at kernel boundaries and declared
intermediate points; the latency half is hardware-bound and is not
emulated here. Rounding is nearest-even with subnormals and
overflow-to-infinity, i.e. exactly what a binary16 cast does.
"""

from __future__ import annotations

import enum
import inspect
from typing import Any, Callable

import numpy as np


class PrecisionMode(enum.Enum):
    FULL = "full"
    HALF_EMULATED = "half_emulated"


def round_f16(x):
    """Round to the nearest binary16 value, widened back to float64.

    Scalars come back as ``float``, arrays as float64 arrays. NaN passes
    through; values beyond +-65504 round to the signed infinity.
    """
    with np.errstate(over="ignore"):
        if np.ndim(x) == 0:
            return float(np.float16(x))
        return np.asarray(x, dtype=np.float64).astype(np.float16).astype(np.float64)


def _is_float_value(v: Any) -> bool:
    if isinstance(v, float):
        return True
    return isinstance(v, np.ndarray) and np.issubdtype(v.dtype, np.floating)


def _round_value(v: Any):
    return round_f16(v) if _is_float_value(v) else v


def with_precision(mode: PrecisionMode, kernel: Callable) -> Callable:
    """Wrap a numeric kernel so it runs under the given precision mode.

    FULL returns the kernel unchanged (bit-identical behavior). Under
    HALF_EMULATED, float inputs and outputs are rounded through binary16,
    and kernels that accept a ``quantize`` keyword get ``round_f16`` as
    their intermediate-point rounding hook.
    """
    if mode is PrecisionMode.FULL:
        return kernel
    takes_quantize = "quantize" in inspect.signature(kernel).parameters

    def wrapped(*args, **kwargs):
        args = tuple(_round_value(a) for a in args)
        kwargs = {k: (_round_value(v) if k != "quantize" else v) for k, v in kwargs.items()}
        if takes_quantize:
            kwargs.setdefault("quantize", round_f16)
        out = kernel(*args, **kwargs)
        if isinstance(out, tuple):
            return tuple(_round_value(v) for v in out)
        return _round_value(out)

    return wrapped
