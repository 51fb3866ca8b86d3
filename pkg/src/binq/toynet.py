"""Reference mixed-precision architecture at desk scale.

FirstConv(1->16, 3x3, s2 p1) -> BatchNorm -> Sign -> BinaryConv(16->16, 3x3,
s1 p1) -> BatchNorm -> RPReLU -> Sign -> BinaryConv(16->32, 3x3, s2 p1) ->
BatchNorm -> RPReLU -> MaxPool(2) -> Flatten -> Linear(->10) -> ArgMax.

Interior conv weights are binary; the first/last L-type layers and all
S-type parameters are real-valued. `build_toy_net` draws random parameters
for kernel/transform testing; trained weights arrive through model files.
"""

from __future__ import annotations

import numpy as np

from .graph import NetworkGraph, make_float_graph
from .layers import LayerKind, LayerSpec
from .tensors import FloatTensor, pack_signs

TOY_CHANNELS = (16, 16, 32)
TOY_CLASSES = 10
TOY_IMAGE_HW = 28


def toy_layer_geometry():
    """(kind, ltype, stride, padding) rows for the reference net."""
    return [
        (LayerKind.FIRST_CONV, "L", 2, 1),
        (LayerKind.BATCHNORM, "S", 1, 0),
        (LayerKind.SIGN, "S", 1, 0),
        (LayerKind.BINARY_CONV, "L", 1, 1),
        (LayerKind.BATCHNORM, "S", 1, 0),
        (LayerKind.RPRELU, "S", 1, 0),
        (LayerKind.SIGN, "S", 1, 0),
        (LayerKind.BINARY_CONV, "L", 1, 1),
        (LayerKind.BATCHNORM, "S", 1, 0),
        (LayerKind.RPRELU, "S", 1, 0),
        (LayerKind.MAXPOOL, "S", 2, 0),
        (LayerKind.FLATTEN, "S", 1, 0),
        (LayerKind.LINEAR, "L", 1, 0),
        (LayerKind.ARGMAX, "S", 1, 0),
    ]


def toy_feature_count(image_hw: int = TOY_IMAGE_HW) -> int:
    h = (image_hw + 1) // 2      # first conv, stride 2 pad 1
    h = h                        # binary convs, stride 1 pad 1
    h = h // 2                   # max pool 2
    return TOY_CHANNELS[2] * h * h


def build_toy_net(seed: int = 0, image_hw: int = TOY_IMAGE_HW) -> NetworkGraph:
    """Random-parameter instance of the reference net, float mode."""
    rng = np.random.default_rng(seed)
    c1, c2, c3 = TOY_CHANNELS

    def bn_params(c):
        return {
            "W": FloatTensor(rng.uniform(0.5, 1.5, c).astype(np.float32)),
            "B": FloatTensor(rng.normal(0.0, 0.3, c).astype(np.float32)),
            "mu": FloatTensor(rng.normal(0.0, 1.0, c).astype(np.float32)),
            "sigma": FloatTensor(rng.uniform(0.8, 2.5, c).astype(np.float32)),
        }

    def rprelu_params(c):
        return {
            "W": FloatTensor(rng.uniform(0.1, 0.5, c).astype(np.float32)),
            "B1": FloatTensor(rng.normal(0.0, 0.5, c).astype(np.float32)),
            "B2": FloatTensor(rng.normal(0.0, 0.5, c).astype(np.float32)),
        }

    def bin_weights(co, ci):
        return pack_signs(rng.choice((-1, 1), size=(co, ci, 3, 3)).astype(np.int8))

    feats = toy_feature_count(image_hw)
    specs = []
    for kind, ltype, stride, padding in toy_layer_geometry():
        params = {}
        if kind is LayerKind.FIRST_CONV:
            params = {"W": FloatTensor(rng.normal(0.0, 0.3, (c1, 1, 3, 3)).astype(np.float32))}
        elif kind is LayerKind.BINARY_CONV:
            co, ci = (c2, c1) if not any(
                s.kind is LayerKind.BINARY_CONV for s in specs) else (c3, c2)
            params = {"W": bin_weights(co, ci)}
        elif kind is LayerKind.BATCHNORM:
            seen_bn = sum(s.kind is LayerKind.BATCHNORM for s in specs)
            params = bn_params((c1, c2, c3)[seen_bn])
        elif kind is LayerKind.RPRELU:
            seen_rp = sum(s.kind is LayerKind.RPRELU for s in specs)
            params = rprelu_params((c2, c3)[seen_rp])
        elif kind is LayerKind.LINEAR:
            params = {"W": FloatTensor(rng.normal(0.0, 0.1, (TOY_CLASSES, feats)).astype(np.float32))}
        specs.append(LayerSpec(kind, ltype, params, stride, padding))
    return make_float_graph(specs)
