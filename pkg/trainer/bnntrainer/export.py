"""Standalone weight-file writer for the inference engine's model format.

Implemented against the byte-layout contract only (no imports from the
engine), so a successful round trip through the engine's loader checks two
independent implementations against each other.

Layout (little-endian): magic 'ZBNN', u16 version=1, u8 mode, u8 bits,
f32 delta, u16 layer count; per layer: u8 kind, u8 stride, u8 padding, then
per parameter tensor (count fixed by kind): u8 dtype, u8 rank, u32 extents,
payload (f32 LE | i16 LE | bits packed LSB-first per byte, row-major).
"""

from __future__ import annotations

import struct

import numpy as np
import torch

KIND_FIRST_CONV = 0
KIND_SIGN = 1
KIND_BINARY_CONV = 2
KIND_BATCHNORM = 3
KIND_RPRELU = 4
KIND_MAXPOOL = 5
KIND_FLATTEN = 6
KIND_LINEAR = 7
KIND_ARGMAX = 8

DTYPE_F32 = 0
DTYPE_BIN1 = 2


def _f32_tensor(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().numpy().astype("<f4")
    head = struct.pack("<BB", DTYPE_F32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _bin_tensor(latent: torch.Tensor) -> bytes:
    arr = latent.detach().cpu().numpy()
    bits = (arr >= 0).reshape(-1)
    payload = np.packbits(bits, bitorder="little").tobytes()
    head = struct.pack("<BB", DTYPE_BIN1, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + payload


def _layer(kind: int, stride: int = 1, padding: int = 0, *tensors: bytes) -> bytes:
    return struct.pack("<BBB", kind, stride, padding) + b"".join(tensors)


def _batchnorm(bn: torch.nn.BatchNorm2d) -> bytes:
    sigma = torch.sqrt(bn.running_var + bn.eps)
    return _layer(KIND_BATCHNORM, 1, 0,
                  _f32_tensor(bn.weight), _f32_tensor(bn.bias),
                  _f32_tensor(bn.running_mean), _f32_tensor(sigma))


def _rprelu(rp) -> bytes:
    return _layer(KIND_RPRELU, 1, 0,
                  _f32_tensor(rp.slope), _f32_tensor(rp.b1), _f32_tensor(rp.b2))


def export_model(model) -> bytes:
    """Serialize a trained ToyBNN as a float-mode model file."""
    model.eval()
    out = bytearray()
    out += b"ZBNN"
    out += struct.pack("<HBBfH", 1, 0, 0, 0.0, 14)
    out += _layer(KIND_FIRST_CONV, model.conv1.stride[0], model.conv1.padding[0],
                  _f32_tensor(model.conv1.weight))
    out += _batchnorm(model.bn1)
    out += _layer(KIND_SIGN)
    out += _layer(KIND_BINARY_CONV, model.bconv1.stride[0], model.bconv1.padding[0],
                  _bin_tensor(model.bconv1.weight))
    out += _batchnorm(model.bn2)
    out += _rprelu(model.rprelu1)
    out += _layer(KIND_SIGN)
    out += _layer(KIND_BINARY_CONV, model.bconv2.stride[0], model.bconv2.padding[0],
                  _bin_tensor(model.bconv2.weight))
    out += _batchnorm(model.bn3)
    out += _rprelu(model.rprelu2)
    out += _layer(KIND_MAXPOOL, 2, 0)
    out += _layer(KIND_FLATTEN)
    out += _layer(KIND_LINEAR, 1, 0, _f32_tensor(model.fc.weight))
    out += _layer(KIND_ARGMAX)
    return bytes(out)
