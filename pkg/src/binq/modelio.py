"""Bit-exact model serialization, IDX dataset loading and report writing.

Model file layout (all little-endian):

  magic 'ZBNN' | u16 version=1 | u8 mode (0 float, 1 conventional, 2 zobnn)
  | u8 bits (0 when float) | f32 delta (0.0 when float) | u16 layer count

  per layer:
    u8 kind {0 FirstConv, 1 Sign, 2 BinaryConv, 3 BatchNorm, 4 RPReLU,
             5 MaxPool, 6 Flatten, 7 Linear, 8 ArgMax}
    u8 stride (pool window for MaxPool) | u8 padding
    per parameter tensor (count and order fixed by the kind):
      u8 dtype {0 f32, 1 qint16, 2 bin1} | u8 rank | rank x u32 extents
      payload: f32 LE | i16 LE | bits packed little-endian within byte,
               row-major

The payload length is derivable from the header fields alone, and the writer
is canonical: equal graphs produce equal bytes.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    PayloadLengthMismatch,
    TruncatedFile,
    UnsupportedVersion,
)
from .graph import LayerNode, NetworkGraph, make_float_graph, validate_structure
from .layers import (
    L_TYPE_KINDS,
    MODE_CONVENTIONAL,
    MODE_FLOAT,
    MODE_ZOBNN,
    PARAM_ORDER,
    LayerKind,
    LayerSpec,
)
from .quantize import QuantConfig
from .tensors import FloatTensor, PackedBitTensor, QuantTensor

MAGIC = b"ZBNN"
VERSION = 1

_MODE_CODES = {MODE_FLOAT: 0, MODE_CONVENTIONAL: 1, MODE_ZOBNN: 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

_KIND_CODES = {
    LayerKind.FIRST_CONV: 0,
    LayerKind.SIGN: 1,
    LayerKind.BINARY_CONV: 2,
    LayerKind.BATCHNORM: 3,
    LayerKind.RPRELU: 4,
    LayerKind.MAXPOOL: 5,
    LayerKind.FLATTEN: 6,
    LayerKind.LINEAR: 7,
    LayerKind.ARGMAX: 8,
}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

_DTYPE_F32, _DTYPE_QINT16, _DTYPE_BIN1 = 0, 1, 2


def save_model(net: NetworkGraph) -> bytes:
    """Serialize a graph; conversion nodes are structural and not stored."""
    mode_code = _MODE_CODES[net.mode]
    bits = net.cfg.bits if net.cfg else 0
    delta = net.cfg.delta if net.cfg else 0.0
    layers = net.layers
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HBBfH", VERSION, mode_code, bits, delta, len(layers))
    for spec in layers:
        out += struct.pack("<BBB", _KIND_CODES[spec.kind], spec.stride, spec.padding)
        for pname in PARAM_ORDER[spec.kind]:
            out += _encode_tensor(spec.param(pname))
    return bytes(out)


def _encode_tensor(t) -> bytes:
    if isinstance(t, FloatTensor):
        dtype, shape = _DTYPE_F32, t.shape
        payload = t.data.astype("<f4").tobytes()
    elif isinstance(t, QuantTensor):
        dtype, shape = _DTYPE_QINT16, t.shape
        if np.any(t.values > 32767) or np.any(t.values < -32768):
            raise ValueError("quantized parameter exceeds its 16-bit container")
        payload = t.values.astype("<i2").tobytes()
    elif isinstance(t, PackedBitTensor):
        dtype, shape = _DTYPE_BIN1, t.shape
        nbytes = (t.size + 7) // 8
        payload = t.words.view(np.uint8)[:nbytes].tobytes()
    else:
        raise TypeError(f"cannot serialize parameter of type {type(t)!r}")
    head = struct.pack("<BB", dtype, len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    return head + payload


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(data: bytes) -> NetworkGraph:
    """Parse model bytes back into an executable graph."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic("not a ZBNN model file")
    version, mode_code, bits, delta, n_layers = r.unpack("<HBBfH")
    if version != VERSION:
        raise UnsupportedVersion(f"file version {version}, reader supports {VERSION}")
    if mode_code not in _MODE_NAMES:
        raise PayloadLengthMismatch(f"unknown mode code {mode_code}")
    mode = _MODE_NAMES[mode_code]
    cfg = None
    if mode != MODE_FLOAT:
        if not (2 <= bits <= 16) or not delta > 0:
            raise PayloadLengthMismatch(
                f"quantized model needs bits in [2,16] and delta > 0, got {bits}, {delta}")
        cfg = QuantConfig(bits, float(delta))

    specs = []
    for _ in range(n_layers):
        kind_code, stride, padding = r.unpack("<BBB")
        if kind_code not in _KIND_NAMES:
            raise PayloadLengthMismatch(f"unknown layer kind code {kind_code}")
        kind = _KIND_NAMES[kind_code]
        params = {}
        for pname in PARAM_ORDER[kind]:
            params[pname] = _decode_tensor(r, cfg)
        ltype = "L" if kind in L_TYPE_KINDS else "S"
        specs.append(LayerSpec(kind, ltype, params, stride, padding, mode))
    if r.pos != len(data):
        raise PayloadLengthMismatch(
            f"{len(data) - r.pos} unexpected trailing bytes")
    return _graph_from_specs(specs, mode, cfg)


def _decode_tensor(r: _Reader, cfg):
    dtype, rank = r.unpack("<BB")
    if rank < 1:
        raise PayloadLengthMismatch("parameter tensor with rank 0")
    shape = r.unpack(f"<{rank}I")
    count = 1
    for extent in shape:  # Python ints: no silent overflow on hostile headers
        if extent < 1:
            raise PayloadLengthMismatch(f"tensor extent {extent} < 1")
        count *= extent
    if count > (1 << 32):
        raise PayloadLengthMismatch(f"tensor of {count} elements exceeds sane bounds")
    if dtype == _DTYPE_F32:
        raw = np.frombuffer(r.take(4 * count), dtype="<f4")
        return FloatTensor(raw.reshape(shape))
    if dtype == _DTYPE_QINT16:
        if cfg is None:
            raise PayloadLengthMismatch("quantized tensor in a float-mode file")
        raw = np.frombuffer(r.take(2 * count), dtype="<i2")
        return QuantTensor(raw.astype(np.int64).reshape(shape), cfg.delta, cfg.bits)
    if dtype == _DTYPE_BIN1:
        nbytes = (count + 7) // 8
        raw = np.frombuffer(r.take(nbytes), dtype=np.uint8)
        nwords = (count + 63) // 64
        buf = np.zeros(nwords * 8, dtype=np.uint8)
        buf[:nbytes] = raw
        return PackedBitTensor(shape, buf.view("<u8").copy())
    raise PayloadLengthMismatch(f"unknown dtype code {dtype}")


def _graph_from_specs(specs, mode, cfg) -> NetworkGraph:
    nodes = [LayerNode(f"{s.kind.value.lower()}{i}", s) for i, s in enumerate(specs)]
    if mode == MODE_FLOAT:
        return make_float_graph(specs)
    net = NetworkGraph(nodes, mode, cfg)
    validate_structure(net)
    if mode == MODE_CONVENTIONAL:
        from .transform import wrap_conventional

        return wrap_conventional(net)
    return net


def save_model_file(net: NetworkGraph, path) -> None:
    Path(path).write_bytes(save_model(net))


def load_model_file(path) -> NetworkGraph:
    return load_model(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# IDX datasets
# ---------------------------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DatasetBatch:
    """u8 images paired with class labels."""

    images: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) int64

    @property
    def nchw(self) -> np.ndarray:
        return self.images[:, None, :, :]

    def inputs(self) -> np.ndarray:
        """Network-ready activations: pixels scaled to [0, 1].

        Normalization keeps every trained parameter at unit-ish scale, which
        keeps the shared quantization range tight.
        """
        return self.nchw.astype(np.float64) / 255.0

    def __len__(self):
        return len(self.labels)


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_idx_dataset(images_path, labels_path) -> DatasetBatch:
    """Load an MNIST-style IDX image/label file pair (optionally gzipped)."""
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)
    if len(img) < 16 or struct.unpack(">I", img[:4])[0] != _IDX_IMAGES_MAGIC:
        raise BadMagic(f"{images_path}: not an IDX image file")
    if len(lab) < 8 or struct.unpack(">I", lab[:4])[0] != _IDX_LABELS_MAGIC:
        raise BadMagic(f"{labels_path}: not an IDX label file")
    n, h, w = struct.unpack(">III", img[4:16])
    n_lab = struct.unpack(">I", lab[4:8])[0]
    if n != n_lab:
        raise CountMismatch(f"{n} images but {n_lab} labels")
    if len(img) - 16 != n * h * w:
        raise TruncatedFile(f"image payload holds {len(img) - 16} bytes, expected {n * h * w}")
    if len(lab) - 8 != n:
        raise TruncatedFile(f"label payload holds {len(lab) - 8} bytes, expected {n}")
    images = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, h, w)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    return DatasetBatch(images.copy(), labels)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", _IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


# ---------------------------------------------------------------------------
# campaign reports
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("experiment", "rate", "trial", "value", "flipped_bits",
                 "trials", "mean", "median", "q1", "q3", "min", "max", "seed")

AGGREGATE_FIELDS = ("experiment", "rate", "trials", "mean", "median",
                    "q1", "q3", "min", "max", "seed")


def write_report_csv(path, trial_rows, aggregate_rows) -> None:
    """Header row, one row per (rate, trial), then aggregate rows."""
    lines = [",".join(REPORT_FIELDS)]
    for row in trial_rows:
        lines.append(",".join([
            str(row["experiment"]), _num(row["rate"]), str(row["trial"]),
            _num(row["value"]), str(row["flipped_bits"]),
            "", "", "", "", "", "", "", "",
        ]))
    for row in aggregate_rows:
        lines.append(",".join([
            str(row["experiment"]), _num(row["rate"]), "", "", "",
            str(row["trials"]), _num(row["mean"]), _num(row["median"]),
            _num(row["q1"]), _num(row["q3"]), _num(row["min"]), _num(row["max"]),
            str(row["seed"]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_report_json(path, aggregate_rows) -> None:
    rows = [{k: row[k] for k in AGGREGATE_FIELDS} for row in aggregate_rows]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def _num(x) -> str:
    return repr(float(x))
