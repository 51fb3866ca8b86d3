"""Scalar quantization kernel and its configuration.

One global scale delta serves the whole network: delta = max|theta| over all
to-be-quantized parameters divided by the largest representable magnitude
2^(b-1)-1. Quantization rounds half away from zero and saturates at the
symmetric range edge; dequantization is plain multiplication by delta, so
quantize(dequantize(q)) == q for every in-range q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScale, NonFiniteInput
from .tensors import QuantTensor, round_half_away


@dataclass(frozen=True)
class QuantConfig:
    bits: int
    delta: float

    def __post_init__(self):
        if not 2 <= self.bits <= 16:
            raise ValueError(f"bits must be in [2, 16], got {self.bits}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1


def compute_delta(params, bits: int) -> float:
    """Scale such that the largest parameter maps to the largest integer.

    `params` is an iterable of arrays (or scalars). The result is rounded to
    float32 so in-memory arithmetic matches the f32 scale a model file carries.
    """
    if not 2 <= bits <= 16:
        raise ValueError(f"bits must be in [2, 16], got {bits}")
    peak = 0.0
    for p in params:
        arr = np.asarray(p, dtype=np.float64)
        if arr.size:
            peak = max(peak, float(np.abs(arr).max()))
    if peak == 0.0:
        raise DegenerateScale("all candidate parameters are zero")
    return float(np.float32(peak / (2 ** (bits - 1) - 1)))


def quantize_array(x, cfg: QuantConfig) -> np.ndarray:
    """clamp(round(x/delta)) onto the signed b-bit grid, half away from zero."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("cannot quantize NaN or infinity")
    q = round_half_away(arr / cfg.delta)
    return np.clip(q, -cfg.qmax, cfg.qmax)


def dequantize_array(q, cfg: QuantConfig) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * cfg.delta


def quantize_value(x_r: float, cfg: QuantConfig) -> int:
    return int(quantize_array(np.float64(x_r), cfg))


def dequantize_value(q: int, cfg: QuantConfig) -> float:
    return float(q * cfg.delta)


def quantize_tensor(x, cfg: QuantConfig) -> QuantTensor:
    """Quantize a float parameter tensor into a QuantTensor."""
    data = x.data if hasattr(x, "data") else x
    return QuantTensor(quantize_array(data, cfg), cfg.delta, cfg.bits)
