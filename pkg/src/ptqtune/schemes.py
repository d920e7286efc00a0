"""Linear int8 quantization schemes.

Four families over signed int8 codes in [-128, 127]:

  Asymmetric       scale=(max-min)/255,  zero_point=-ROUND(min/scale)-128
  Symmetric        scale=max_abs/127,    zero_point=0
  SymmetricUint8   min>=0: scale=max_abs/255, zero_point=-128
                   else:   falls back to Symmetric
  SymmetricPower2  scale=2^ceil(log2(symmetric scale)), zero_point=0

quant(v)  = clamp(ROUND(v/scale + zero_point), -128, 127)
dequant(c) = scale * (c - zero_point)

ROUND is round-half-away-from-zero, applied identically in every scheme.
Asymmetric ranges are first extended to include 0.0 so the real zero is
always exactly representable and the zero point stays in [-128, 127].
Degenerate ranges (max_abs = 0, or min = max = 0) get scale 1.0 so the
constant maps to the scheme's zero code.  Scales are stored as fp32; the
power-of-two scale is derived from the *stored* fp32 symmetric scale, which
pins the audit property scale_p2/scale_sym in [1, 2) exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

QMIN, QMAX = -128, 127


class Scheme(str, Enum):
    Asymmetric = "Asymmetric"
    Symmetric = "Symmetric"
    SymmetricUint8 = "SymmetricUint8"
    SymmetricPower2 = "SymmetricPower2"


@dataclass
class QuantParams:
    """(scale, zero_point) for one tensor or one channel axis.

    scale/zero_point are scalars for tensor granularity, 1-d arrays indexed
    by ``axis`` (always the output-channel axis, 0) for channel granularity.
    """

    scale: np.ndarray | float
    zero_point: np.ndarray | int
    bit_width: int = 8
    axis: int | None = None

    def scale_vec(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.scale, dtype=np.float32))

    def zp_vec(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.zero_point, dtype=np.int64))


def round_half_away(x: np.ndarray | float) -> np.ndarray | float:
    """Round halves away from zero (the ROUND used by all schemes)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def ceil_log2(x: float) -> int:
    """Exact ceil(log2(x)) for positive finite floats via frexp."""
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"ceil_log2 needs a positive finite value, got {x}")
    m, e = math.frexp(x)  # x = m * 2**e, m in [0.5, 1)
    return e - 1 if m == 0.5 else e


def _check_finite(*vals: float) -> None:
    for v in vals:
        if not math.isfinite(v):
            raise ValueError(f"non-finite range value {v}")


def params_asymmetric(vmin: float, vmax: float, n: int = 8) -> QuantParams:
    _check_finite(vmin, vmax)
    if vmin > vmax:
        raise ValueError(f"min {vmin} > max {vmax}")
    vmin, vmax = min(vmin, 0.0), max(vmax, 0.0)  # keep 0.0 representable
    if vmin == vmax:  # only possible when both are 0
        return QuantParams(scale=np.float32(1.0), zero_point=0)
    scale = (vmax - vmin) / (2**n - 1)
    # zero point from the full-precision scale: a centered range like
    # (-1, 1) must land min/scale on an exact half so ROUND settles it,
    # which the fp32-rounded scale would miss by one ulp
    zp = int(-round_half_away(vmin / scale)) - 2 ** (n - 1)
    return QuantParams(scale=np.float32(scale), zero_point=zp)


def params_symmetric(max_abs: float, n: int = 8) -> QuantParams:
    _check_finite(max_abs)
    if max_abs == 0.0:
        return QuantParams(scale=np.float32(1.0), zero_point=0)
    scale = np.float32(abs(max_abs) / (2 ** (n - 1) - 1))
    return QuantParams(scale=scale, zero_point=0)


def params_symmetric_uint8(vmin: float, max_abs: float, n: int = 8) -> QuantParams:
    _check_finite(vmin, max_abs)
    if vmin < 0.0:
        return params_symmetric(max_abs, n)
    if max_abs == 0.0:
        return QuantParams(scale=np.float32(1.0), zero_point=-(2 ** (n - 1)))
    scale = np.float32(abs(max_abs) / (2**n - 1))
    return QuantParams(scale=scale, zero_point=-(2 ** (n - 1)))


def params_power2(max_abs: float, n: int = 8) -> QuantParams:
    base = params_symmetric(max_abs, n)
    k = ceil_log2(float(base.scale))
    return QuantParams(scale=np.float32(2.0**k), zero_point=0)


def params_for_range(scheme: Scheme, vmin: float, vmax: float, n: int = 8) -> QuantParams:
    """Dispatch on scheme given an observed/clipped (min, max) range."""
    max_abs = max(abs(float(vmin)), abs(float(vmax)))
    if scheme == Scheme.Asymmetric:
        return params_asymmetric(vmin, vmax, n)
    if scheme == Scheme.Symmetric:
        return params_symmetric(max_abs, n)
    if scheme == Scheme.SymmetricUint8:
        return params_symmetric_uint8(vmin, max_abs, n)
    if scheme == Scheme.SymmetricPower2:
        return params_power2(max_abs, n)
    raise ValueError(f"unknown scheme {scheme!r}")


def _broadcast(p: QuantParams, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    scale = np.asarray(p.scale, dtype=np.float64)
    zp = np.asarray(p.zero_point, dtype=np.float64)
    if p.axis is not None:
        shape = [1] * ndim
        shape[p.axis] = -1
        scale = scale.reshape(shape)
        zp = zp.reshape(shape)
    return scale, zp


def quantize_array(x: np.ndarray, p: QuantParams) -> np.ndarray:
    """fp -> int8 codes under p (vectorized; per-channel when p.axis set)."""
    x = np.asarray(x, dtype=np.float64)
    scale, zp = _broadcast(p, x.ndim)
    codes = round_half_away(x / scale + zp)
    return np.clip(codes, QMIN, QMAX).astype(np.int8)


def dequantize_array(codes: np.ndarray, p: QuantParams) -> np.ndarray:
    scale, zp = _broadcast(p, np.asarray(codes).ndim)
    return ((np.asarray(codes, dtype=np.float64) - zp) * scale).astype(np.float32)
