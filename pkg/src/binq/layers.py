"""Layer kernels for the three execution modes.

Every S-type forward is dual-mode: it accepts a quantized-grid input or a
real input and, in quantized execution, always emits grid values. Which of a
layer's parameters are stored on the grid depends on the input domain the
layer sees:

  batchnorm, quantized input:  gamma = W_q*(x_q - mu_q)/sigma_q + B_q
  batchnorm, real input:       gamma = W_q*(x_r - mu_r)/sigma_r + B_q
  rprelu,    quantized input:  gamma = W_r*(x_q + B1_q) + B2_q
  rprelu,    real input:       gamma = W_q*(x_r + B1_r) + B2_q

with gamma re-rounded to the grid, so delta*gamma tracks the float layer's
real output. L-type layers with quantized weights compute round(x * W_q) on
real input and round(delta * (x_q * W_q)) on grid input. Sign and argmax are
invariant under the positive scale delta, which is what lets the surrounding
conversion nodes disappear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeError
from .quantize import QuantConfig, quantize_value
from .tensors import (
    FloatTensor,
    PackedBitTensor,
    QuantTensor,
    _im2col,
    binary_conv2d,
    maxpool2d,
    pack_bits01,
    pack_signs,
    round_half_away,
    unpack_signs,
)


class LayerKind(str, Enum):
    FIRST_CONV = "FirstConv"
    SIGN = "Sign"
    BINARY_CONV = "BinaryConv"
    BATCHNORM = "BatchNorm"
    RPRELU = "RPReLU"
    MAXPOOL = "MaxPool"
    FLATTEN = "Flatten"
    LINEAR = "Linear"
    ARGMAX = "ArgMax"


L_TYPE_KINDS = {LayerKind.FIRST_CONV, LayerKind.BINARY_CONV, LayerKind.LINEAR}

# parameter tensors per kind, in canonical (serialization) order
PARAM_ORDER = {
    LayerKind.FIRST_CONV: ("W",),
    LayerKind.SIGN: (),
    LayerKind.BINARY_CONV: ("W",),
    LayerKind.BATCHNORM: ("W", "B", "mu", "sigma"),
    LayerKind.RPRELU: ("W", "B1", "B2"),
    LayerKind.MAXPOOL: (),
    LayerKind.FLATTEN: (),
    LayerKind.LINEAR: ("W",),
    LayerKind.ARGMAX: (),
}

MODE_FLOAT = "float"
MODE_CONVENTIONAL = "conventional"
MODE_ZOBNN = "zobnn"


@dataclass
class LayerSpec:
    """One layer: kind, L/S flag, parameter store and conv geometry.

    `stride` doubles as the pool window for MaxPool layers. `mode` names the
    execution mode the parameter store was built for.
    """

    kind: LayerKind
    ltype: str  # "L" or "S"
    params: dict = field(default_factory=dict)
    stride: int = 1
    padding: int = 0
    mode: str = MODE_FLOAT

    def param(self, name):
        try:
            return self.params[name]
        except KeyError:
            raise ShapeError(f"{self.kind.value} layer lacks parameter {name!r}") from None


def _is_quant(x) -> bool:
    if isinstance(x, QuantTensor):
        return True
    if isinstance(x, FloatTensor):
        return False
    return np.issubdtype(np.asarray(x).dtype, np.integer)


def _raw(x) -> np.ndarray:
    if isinstance(x, QuantTensor):
        return x.values
    if isinstance(x, FloatTensor):
        return x.data
    return np.asarray(x)


def _per_channel(p: np.ndarray, ndim: int) -> np.ndarray:
    """Broadcast a per-channel vector across NCHW or NC activations."""
    if ndim == 4:
        return p.reshape(1, -1, 1, 1)
    return p.reshape(1, -1)


def _check_channels(x: np.ndarray, spec: LayerSpec, names) -> None:
    c = x.shape[1] if x.ndim >= 2 else x.shape[0]
    for name in names:
        p = spec.param(name)
        if _raw(p).size != c:
            raise ShapeError(
                f"{spec.kind.value} parameter {name} has {_raw(p).size} channels, input has {c}")


# ---------------------------------------------------------------------------
# S-type forwards
# ---------------------------------------------------------------------------


def batchnorm_core(x: np.ndarray, quant_in: bool, spec: LayerSpec) -> np.ndarray:
    """Grid-valued batchnorm output (int64) for either input domain."""
    _check_channels(x, spec, ("W", "B", "mu", "sigma"))
    nd = x.ndim
    w = _per_channel(_raw(spec.param("W")).astype(np.float64), nd)
    b = _per_channel(_raw(spec.param("B")), nd)
    mu = _per_channel(np.asarray(_raw(spec.param("mu")), dtype=np.float64), nd)
    sigma = _per_channel(np.asarray(_raw(spec.param("sigma")), dtype=np.float64), nd)
    if quant_in and not _is_quant(spec.param("mu")):
        raise ShapeError("quantized input requires quantized mu/sigma")
    if not quant_in and _is_quant(spec.param("mu")):
        raise ShapeError("real input requires real mu/sigma")
    t = np.asarray(x, dtype=np.float64) - mu
    t *= w / sigma
    return round_half_away(t) + np.asarray(b, dtype=np.int64)


def batchnorm_float_core(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    _check_channels(x, spec, ("W", "B", "mu", "sigma"))
    nd = x.ndim
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    w = _per_channel(_raw(spec.param("W")).astype(dt), nd)
    b = _per_channel(_raw(spec.param("B")).astype(dt), nd)
    mu = _per_channel(_raw(spec.param("mu")).astype(dt), nd)
    sigma = _per_channel(_raw(spec.param("sigma")).astype(dt), nd)
    t = np.asarray(x, dtype=dt) - mu
    t *= w / sigma
    t += b
    return t


def batchnorm_forward(x, spec: LayerSpec):
    """Dual-mode batchnorm. Emits QuantTensor in zobnn mode, FloatTensor in float mode."""
    if spec.mode == MODE_FLOAT:
        return FloatTensor(batchnorm_float_core(_raw(x), spec))
    cfg = _cfg_of(spec)
    gamma = batchnorm_core(_raw(x), _is_quant(x), spec)
    return QuantTensor(gamma, cfg.delta, cfg.bits)


def rprelu_core(x: np.ndarray, quant_in: bool, spec: LayerSpec) -> np.ndarray:
    """Grid-valued rprelu output; branch tested in the input's own domain."""
    _check_channels(x, spec, ("W", "B1", "B2"))
    nd = x.ndim
    slope = _per_channel(_raw(spec.param("W")).astype(np.float64), nd)
    b1 = _per_channel(_raw(spec.param("B1")), nd)
    b2 = _per_channel(_raw(spec.param("B2")), nd)
    if quant_in:
        if _is_quant(spec.param("B1")) is False:
            raise ShapeError("quantized input requires quantized B1")
        one = 1.0  # W stays real; the unit branch is exact
    else:
        if _is_quant(spec.param("B1")):
            raise ShapeError("real input requires real B1")
        one = float(_unit_weight(spec))
    branch = x > -np.asarray(b1, dtype=x.dtype)
    w = np.where(branch, one, slope)
    t = np.asarray(x, dtype=np.float64) + np.asarray(b1, dtype=np.float64)
    t *= w
    return round_half_away(t) + np.asarray(b2, dtype=np.int64)


def _unit_weight(spec: LayerSpec) -> int:
    # real-input mode quantizes W, including the implicit 1 branch
    return quantize_value(1.0, _cfg_of(spec))


def rprelu_float_core(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    _check_channels(x, spec, ("W", "B1", "B2"))
    nd = x.ndim
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    slope = _per_channel(_raw(spec.param("W")).astype(dt), nd)
    b1 = _per_channel(_raw(spec.param("B1")).astype(dt), nd)
    b2 = _per_channel(_raw(spec.param("B2")).astype(dt), nd)
    x = np.asarray(x, dtype=dt)
    t = x + b1
    t *= np.where(x > -b1, np.ones((), dtype=dt), slope)
    t += b2
    return t


def rprelu_forward(x, spec: LayerSpec):
    if spec.mode == MODE_FLOAT:
        return FloatTensor(rprelu_float_core(_raw(x), spec))
    cfg = _cfg_of(spec)
    gamma = rprelu_core(_raw(x), _is_quant(x), spec)
    return QuantTensor(gamma, cfg.delta, cfg.bits)


def sign_core(x: np.ndarray) -> PackedBitTensor:
    """Binarize at threshold zero; exactly 0 maps to +1."""
    arr = np.asarray(x)
    return pack_bits01((arr >= 0).reshape(-1), arr.shape)


def sign_forward(x, spec: LayerSpec = None) -> PackedBitTensor:
    """Threshold-zero binarization; scale-invariant, so both domains share it."""
    return sign_core(_raw(x))


def argmax_output(logits) -> np.ndarray:
    """Index of the maximum along the last axis; ties break to the lowest index."""
    arr = _raw(logits)
    if arr.size == 0 or arr.shape[-1] == 0:
        raise ShapeError("argmax over an empty logit vector")
    return np.argmax(arr, axis=-1)


# ---------------------------------------------------------------------------
# L-type forwards with quantized weights
# ---------------------------------------------------------------------------


_F64_EXACT = 2 ** 53


def _conv_accumulate(x: np.ndarray, wq: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Convolve against integer weights.

    float64 accumulation while exact; switches to int64 when the worst-case
    sum would lose integer exactness. Sums beyond the int64 range fall back
    to float64 so corrupted values keep flowing instead of aborting.
    """
    co = wq.shape[0]
    taps = wq[0].size
    bound = taps * float(np.abs(x).max(initial=0)) * float(np.abs(wq).max(initial=0))
    if np.issubdtype(np.asarray(x).dtype, np.integer) and _F64_EXACT <= bound < 2 ** 63:
        ip = _im2col(np.asarray(x, dtype=np.int64), wq.shape[2], wq.shape[3],
                     stride, padding)
        out = ip.reshape(-1, taps) @ wq.reshape(co, -1).T.astype(np.int64)
        return out.reshape(*ip.shape[:3], co).transpose(0, 3, 1, 2)
    patches = _im2col(np.asarray(x, dtype=np.float64), wq.shape[2], wq.shape[3],
                      stride, padding)
    out = patches.reshape(-1, taps) @ wq.reshape(co, -1).T.astype(np.float64)
    return out.reshape(*patches.shape[:3], co).transpose(0, 3, 1, 2)


def first_conv_core(x: np.ndarray, quant_in: bool, spec: LayerSpec,
                    cfg: QuantConfig) -> np.ndarray:
    """Quantized-weight convolution returning grid values.

    Real input: gamma = round(x conv W_q) (exact integers for pixel inputs).
    Grid input: gamma = round(delta * (x_q conv W_q)), returning the bilinear
    product to the shared single-delta grid.
    """
    wq = _raw(spec.param("W"))
    if not _is_quant(spec.param("W")):
        raise ShapeError("quantized execution requires quantized conv weights")
    acc = _conv_accumulate(x, wq, spec.stride, spec.padding)
    if quant_in:
        return round_half_away(np.asarray(acc, dtype=np.float64) * cfg.delta)
    if np.issubdtype(np.asarray(acc).dtype, np.integer):
        return acc.astype(np.int64)
    return round_half_away(acc)


def first_conv_forward(x, spec: LayerSpec) -> QuantTensor:
    cfg = _cfg_of(spec)
    gamma = first_conv_core(_raw(x), _is_quant(x), spec, cfg)
    return QuantTensor(gamma, cfg.delta, cfg.bits)


def last_linear_core(x: np.ndarray, quant_in: bool, spec: LayerSpec,
                     cfg: QuantConfig) -> np.ndarray:
    """Quantized-weight linear layer; same scale handling as first_conv_core."""
    wq = _raw(spec.param("W"))  # (out, in)
    if x.ndim != 2 or wq.ndim != 2 or x.shape[1] != wq.shape[1]:
        raise ShapeError(f"linear shapes {x.shape} x {wq.shape} do not chain")
    bound = x.shape[1] * float(np.abs(x).max(initial=0)) * float(np.abs(wq).max(initial=0))
    if np.issubdtype(x.dtype, np.integer) and bound < 2 ** 63:
        acc = x.astype(np.int64) @ wq.T.astype(np.int64)
    else:
        # float64 keeps corrupted out-of-range values flowing (no abort)
        acc = x.astype(np.float64) @ wq.T.astype(np.float64)
    if quant_in:
        return round_half_away(np.asarray(acc, dtype=np.float64) * cfg.delta)
    if np.issubdtype(np.asarray(acc).dtype, np.integer):
        return acc.astype(np.int64)
    return round_half_away(acc)


def last_linear_forward(x, spec: LayerSpec) -> QuantTensor:
    cfg = _cfg_of(spec)
    gamma = last_linear_core(_raw(x), _is_quant(x), spec, cfg)
    return QuantTensor(gamma, cfg.delta, cfg.bits)


def binary_conv_core(x: PackedBitTensor, spec: LayerSpec) -> np.ndarray:
    return binary_conv2d(x, spec.param("W"), spec.stride, spec.padding)


def maxpool_core(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    return maxpool2d(x, spec.stride)


def _cfg_of(spec: LayerSpec) -> QuantConfig:
    for p in spec.params.values():
        if isinstance(p, QuantTensor):
            return QuantConfig(p.bits, p.delta)
    raise ShapeError(f"{spec.kind.value} layer holds no quantized parameters")


def float_weights_as_signs(w: FloatTensor) -> PackedBitTensor:
    """Binarize latent float conv weights to the +-1 packed form."""
    return pack_signs(np.where(w.data >= 0, 1, -1).astype(np.int8))


__all__ = [
    "LayerKind",
    "LayerSpec",
    "L_TYPE_KINDS",
    "PARAM_ORDER",
    "MODE_FLOAT",
    "MODE_CONVENTIONAL",
    "MODE_ZOBNN",
    "batchnorm_forward",
    "rprelu_forward",
    "sign_forward",
    "argmax_output",
    "first_conv_forward",
    "last_linear_forward",
    "batchnorm_core",
    "batchnorm_float_core",
    "rprelu_core",
    "rprelu_float_core",
    "sign_core",
    "first_conv_core",
    "last_linear_core",
    "binary_conv_core",
    "maxpool_core",
    "float_weights_as_signs",
    "unpack_signs",
]
