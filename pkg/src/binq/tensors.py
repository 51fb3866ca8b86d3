"""Dense tensor containers and the three arithmetic kernels.

Three value domains flow through a network: real values (FloatTensor,
IEEE-754 single storage), integer grid values sharing one global scale
(QuantTensor), and sign bits packed one bit per element (PackedBitTensor).
The kernels here are pure functions; all containers are immutable by
convention (no op mutates its operands).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_WORD_BITS = 64  # internal packing width; external formats repack per byte


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero, as int64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return np.int64(np.trunc(x + np.copysign(0.5, x)))
    t = np.copysign(np.full_like(x, 0.5), x)
    t += x
    return t.astype(np.int64)  # int64 cast truncates toward zero


def _check_extents(shape: tuple[int, ...]) -> None:
    if len(shape) == 0 or any(int(e) < 1 for e in shape):
        raise ShapeError(f"extents must all be >= 1, got {shape}")


class FloatTensor:
    """Dense real tensor, float32 storage, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        _check_extents(arr.shape)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"FloatTensor(shape={self.shape})"


class QuantTensor:
    """Integer grid values with a shared global scale delta and logical width bits.

    Fault-free values of a parameter tensor lie in [-(2^(b-1)-1), 2^(b-1)-1];
    a corrupted tensor may additionally hold -2^(b-1). Activation tensors use
    the same grid but are carried in int64 and may exceed the parameter range.
    """

    __slots__ = ("values", "delta", "bits")

    def __init__(self, values, delta: float, bits: int):
        arr = np.ascontiguousarray(values, dtype=np.int64)
        _check_extents(arr.shape)
        if not (delta > 0):
            raise ValueError(f"delta must be positive, got {delta}")
        if not 2 <= int(bits) <= 16:
            raise ValueError(f"bits must be in [2, 16], got {bits}")
        self.values = arr
        self.delta = float(delta)
        self.bits = int(bits)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def dequantized(self) -> np.ndarray:
        return self.values.astype(np.float64) * self.delta

    def __repr__(self):
        return f"QuantTensor(shape={self.shape}, delta={self.delta}, bits={self.bits})"


class PackedBitTensor:
    """{-1,+1} tensor packed one bit per element.

    Element i sits at word i // 64, bit i % 64 of the row-major flattening;
    bit 1 encodes +1, bit 0 encodes -1. Trailing pad bits of the last word
    are zero.
    """

    __slots__ = ("shape", "words")

    def __init__(self, shape: tuple[int, ...], words: np.ndarray):
        shape = tuple(int(e) for e in shape)
        _check_extents(shape)
        n = int(np.prod(shape))
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 1 or words.size != (n + _WORD_BITS - 1) // _WORD_BITS:
            raise ShapeError(f"word count {words.size} does not match {n} elements")
        self.shape = shape
        self.words = words

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def __repr__(self):
        return f"PackedBitTensor(shape={self.shape})"


def pack_bits01(bits01: np.ndarray, shape) -> PackedBitTensor:
    """Pack a flat 0/1 uint8 array into LSB-first words."""
    n = bits01.size
    nwords = (n + _WORD_BITS - 1) // _WORD_BITS
    bytes_le = np.packbits(bits01, bitorder="little")
    buf = np.zeros(nwords * 8, dtype=np.uint8)
    buf[: bytes_le.size] = bytes_le
    return PackedBitTensor(shape, buf.view("<u8").copy())


def pack_signs(signs) -> PackedBitTensor:
    """Pack a +-1 array into bits (+1 -> 1, -1 -> 0)."""
    arr = np.asarray(signs)
    _check_extents(arr.shape)
    flat = arr.reshape(-1)
    if not np.all(np.abs(flat.astype(np.int64)) == 1):
        raise ValueError("pack_signs expects only +1/-1 values")
    return pack_bits01((flat > 0).astype(np.uint8), arr.shape)


def unpack_signs(packed: PackedBitTensor) -> np.ndarray:
    """Inverse of pack_signs; returns an int8 array of +-1."""
    flat = unpack_bits01(packed).reshape(-1).astype(np.int8)
    flat = flat * 2 - 1
    return flat.reshape(packed.shape)


def unpack_bits01(packed: PackedBitTensor) -> np.ndarray:
    """Unpack to raw 0/1 bits (uint8), row-major logical order."""
    bits = np.unpackbits(packed.words.view(np.uint8), bitorder="little")
    return bits[: packed.size].reshape(packed.shape)


# ---------------------------------------------------------------------------
# convolution and matmul kernels
# ---------------------------------------------------------------------------


def _conv_geometry(in_shape, w_shape, stride, padding):
    n, c, h, w = in_shape
    co, ci, kh, kw = w_shape
    if ci != c:
        raise ShapeError(f"input has {c} channels but weights expect {ci}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    return n, c, co, kh, kw, oh, ow


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            pad_value=0) -> np.ndarray:
    """(N,C,H,W) -> (N, OH, OW, C*KH*KW) patches, kernel row-major."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, OH, OW, KH, KW)
    oh, ow = win.shape[2], win.shape[3]
    patches = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)
    return patches


def conv2d_float(inp: FloatTensor, weights: FloatTensor, stride: int = 1,
                 padding: int = 0) -> FloatTensor:
    """Cross-correlation of NCHW input with OIHW weights.

    Accumulates in double precision, stores single precision.
    """
    if inp.data.ndim != 4 or weights.data.ndim != 4:
        raise ShapeError("conv2d_float expects 4-d NCHW input and OIHW weights")
    n, c, co, kh, kw, oh, ow = _conv_geometry(inp.shape, weights.shape, stride, padding)
    patches = _im2col(inp.data.astype(np.float64), kh, kw, stride, padding)
    wmat = weights.data.astype(np.float64).reshape(co, -1)
    out = patches.reshape(-1, c * kh * kw) @ wmat.T
    return FloatTensor(out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2).astype(np.float32))


def binary_dot(w: PackedBitTensor, a: PackedBitTensor, n: int) -> int:
    """+-1 dot product of two packed vectors via XNOR and popcount.

    Returns 2*popcount(XNOR(w, a)) - n over the first n elements.
    """
    if w.size != n or a.size != n:
        raise ShapeError(f"binary_dot needs {n}-element operands, got {w.size} and {a.size}")
    diff = np.bitwise_xor(w.words, a.words)
    mismatches = int(np.bitwise_count(diff).sum())  # pad bits agree (both zero)
    matches = n - mismatches
    return 2 * matches - n


_SGEMM_THRESHOLD = 1 << 21  # rows * out_channels * taps above which the
                            # +-1-embedding BLAS path is cheaper than popcount


def _binary_conv_popcount(inp, weights, stride, padding, geom) -> np.ndarray:
    n, c, co, kh, kw, oh, ow = geom
    taps = c * kh * kw
    bits = unpack_bits01(inp)
    patches = _im2col(bits, kh, kw, stride, padding, pad_value=0)
    rows = patches.reshape(-1, taps)
    row_bytes = np.packbits(rows, axis=1, bitorder="little")
    w_bytes = np.packbits(unpack_bits01(weights).reshape(co, -1), axis=1,
                          bitorder="little")
    # XOR counts mismatches; byte-level pad bits agree in both operands
    mism = np.bitwise_count(row_bytes[:, None, :] ^ w_bytes[None, :, :]).sum(
        axis=2, dtype=np.int64)
    out = taps - 2 * mism
    return out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)


def _binary_conv_embedded(inp, weights, stride, padding, geom) -> np.ndarray:
    """Exact +-1 embedding, accumulated tap by tap to avoid patch blowup."""
    n, c, co, kh, kw, oh, ow = geom
    x = unpack_signs(inp).astype(np.float32)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=-1.0)
    w = unpack_signs(weights).astype(np.float32)  # (CO, C, KH, KW)
    acc = np.zeros((n, oh, ow, co), dtype=np.float32)  # |sums| <= taps << 2^24
    for i in range(kh):
        for j in range(kw):
            xs = x[:, :, i: i + (oh - 1) * stride + 1: stride,
                   j: j + (ow - 1) * stride + 1: stride]
            acc += np.tensordot(xs, w[:, :, i, j], axes=([1], [1]))
    return np.rint(acc).astype(np.int64).transpose(0, 3, 1, 2)


def binary_conv2d(inp: PackedBitTensor, weights: PackedBitTensor, stride: int = 1,
                  padding: int = 0) -> np.ndarray:
    """Binary convolution; every output equals binary_dot over its window.

    Padding contributes -1 elements (bit 0). Output is an int64 tensor of
    XNOR/popcount sums. Large batches dispatch to an exact +-1-embedding
    matmul; small inputs run the packed popcount kernel directly.
    """
    if len(inp.shape) != 4 or len(weights.shape) != 4:
        raise ShapeError("binary_conv2d expects 4-d NCHW input and OIHW weights")
    geom = _conv_geometry(inp.shape, weights.shape, stride, padding)
    n, c, co, kh, kw, oh, ow = geom
    if n * oh * ow * co * c * kh * kw >= _SGEMM_THRESHOLD:
        return _binary_conv_embedded(inp, weights, stride, padding, geom)
    return _binary_conv_popcount(inp, weights, stride, padding, geom)


def matmul_rows(inp, weights):
    """Row-by-column product of two same-domain 2-d tensors.

    FloatTensor operands accumulate in float64 and return the float64
    accumulator; QuantTensor operands accumulate in int64 and raise
    OverflowError if the worst-case sum could exceed the signed 64-bit range.
    """
    if isinstance(inp, FloatTensor) and isinstance(weights, FloatTensor):
        a, b = inp.data, weights.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not chain")
        return a.astype(np.float64) @ b.astype(np.float64)
    if isinstance(inp, QuantTensor) and isinstance(weights, QuantTensor):
        a, b = inp.values, weights.values
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not chain")
        check_matmul_bounds(a, b)
        return a @ b
    raise ShapeError("matmul_rows operands must share a domain (both float or both quantized)")


def check_matmul_bounds(a: np.ndarray, b: np.ndarray) -> None:
    """Reject integer matmuls whose worst-case accumulator exceeds int64."""
    n = a.shape[1]
    amax = int(np.abs(a).max(initial=0))
    bmax = int(np.abs(b).max(initial=0))
    if n * amax * bmax >= 2 ** 63:
        raise OverflowError(
            f"int64 accumulator may overflow: {n} terms of magnitude {amax}*{bmax}")


def maxpool2d(x: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping max pooling (stride == window), floor on odd extents."""
    if x.ndim != 4:
        raise ShapeError("maxpool2d expects a 4-d NCHW tensor")
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    x = x[:, :, : oh * window, : ow * window]
    x = x.reshape(n, c, oh, window, ow, window)
    return x.max(axis=(3, 5))
