"""Randomized bit-flip corruption of parameter memory images.

Parameters are encoded into a logical memory image - 32 bits per float
value, b bits (two's complement) per quantized value, 1 bit per binary
value - and K ~ Binomial(total_bits, P) distinct uniformly-chosen bits are
inverted, which is distributionally identical to flipping every bit
independently with probability P. The counter-based generator is keyed by
(seed, trial_index), so trials are reproducible and mutually independent
without shared state.

Every bit pattern decodes: floats may become NaN/Inf, quantized values may
reach -2^(b-1). Decoding never aborts an inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnknownLayer
from .graph import LayerNode, NetworkGraph
from .layers import PARAM_ORDER, LayerKind
from .tensors import FloatTensor, PackedBitTensor, QuantTensor, pack_signs, unpack_bits01


@dataclass(frozen=True)
class FaultConfig:
    """Per-bit flip probability plus the keying that pins down the flip set."""

    rate: float
    seed: int = 0
    trial_index: int = 0
    target: str = "all"  # "all" | layer name | "kind:<KindName>"

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")


@dataclass
class Section:
    layer: str
    param: str
    encoding: str  # "f32" | "qint" | "bin"
    bits_per_value: int
    shape: tuple
    data: np.ndarray  # u32 bit patterns | int64 values | u8 bits

    @property
    def total_bits(self) -> int:
        return self.data.size * self.bits_per_value if self.encoding != "bin" else self.data.size


@dataclass
class MemoryImage:
    """Bit-level view of a network's stored parameters."""

    sections: list = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return sum(s.total_bits for s in self.sections)

    def copy(self) -> "MemoryImage":
        return MemoryImage([replace(s, data=s.data.copy()) for s in self.sections])

    def diff_bits(self, other: "MemoryImage") -> int:
        """Number of bit positions at which two images differ."""
        total = 0
        for a, b in zip(self.sections, other.sections):
            if a.encoding == "f32":
                total += int(np.bitwise_count(a.data ^ b.data).sum())
            elif a.encoding == "qint":
                mask = (1 << a.bits_per_value) - 1
                total += int(np.bitwise_count((a.data ^ b.data) & mask).sum())
            else:
                total += int((a.data != b.data).sum())
        return total


def _rng(cfg: FaultConfig) -> np.random.Generator:
    key = (cfg.seed & 0xFFFFFFFFFFFFFFFF) | (int(cfg.trial_index) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _encode_tensor(layer: str, pname: str, t) -> Section:
    if isinstance(t, FloatTensor):
        return Section(layer, pname, "f32", 32, t.shape,
                        t.data.reshape(-1).view(np.uint32).copy())
    if isinstance(t, QuantTensor):
        return Section(layer, pname, "qint", t.bits, t.shape,
                        t.values.reshape(-1).copy())
    if isinstance(t, PackedBitTensor):
        return Section(layer, pname, "bin", 1, t.shape,
                        unpack_bits01(t).reshape(-1).copy())
    raise TypeError(f"cannot image parameter of type {type(t)!r}")


def _decode_tensor(section: Section, template):
    if section.encoding == "f32":
        return FloatTensor(section.data.view(np.float32).reshape(section.shape))
    if section.encoding == "qint":
        return QuantTensor(section.data.reshape(section.shape),
                           template.delta, template.bits)
    return pack_signs(section.data.reshape(section.shape).astype(np.int8) * 2 - 1)


def _target_layers(net: NetworkGraph, target: str) -> list:
    nodes = net.layer_nodes
    if target == "all":
        return nodes
    if target.startswith("kind:"):
        kind_name = target.split(":", 1)[1]
        try:
            kind = LayerKind(kind_name)
        except ValueError:
            raise UnknownLayer(f"unknown layer kind {kind_name!r}") from None
        chosen = [n for n in nodes if n.spec.kind is kind]
        if not chosen:
            raise UnknownLayer(f"network has no {kind_name} layer")
        return chosen
    chosen = [n for n in nodes if n.name == target]
    if not chosen:
        raise UnknownLayer(f"network has no layer named {target!r}")
    return chosen


def encode_network(net: NetworkGraph, target: str = "all") -> MemoryImage:
    """Image of the stored parameters of the targeted layers."""
    image = MemoryImage()
    for node in _target_layers(net, target):
        for pname in PARAM_ORDER[node.spec.kind]:
            image.sections.append(_encode_tensor(node.name, pname, node.spec.param(pname)))
    return image


def _flip_positions(total_bits: int, cfg: FaultConfig) -> np.ndarray:
    if total_bits == 0:
        return np.empty(0, dtype=np.int64)
    rng = _rng(cfg)
    k = int(rng.binomial(total_bits, cfg.rate))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k == total_bits:
        return np.arange(total_bits, dtype=np.int64)
    if k > total_bits // 4:
        return rng.permutation(total_bits)[:k].astype(np.int64)
    # rejection sampling keeps the cost O(k) for the sparse regime
    chosen = np.unique(rng.integers(0, total_bits, size=k))
    while chosen.size < k:
        extra = rng.integers(0, total_bits, size=k - chosen.size)
        chosen = np.unique(np.concatenate([chosen, extra]))
    return chosen.astype(np.int64)


def flip_count(total_bits: int, cfg: FaultConfig) -> int:
    """The K this (seed, trial) draws for an image of the given size."""
    if total_bits == 0:
        return 0
    return int(_rng(cfg).binomial(total_bits, cfg.rate))


def flip_bits(image: MemoryImage, cfg: FaultConfig) -> MemoryImage:
    """Return a copy of the image with the drawn bit positions inverted."""
    out = image.copy()
    positions = _flip_positions(image.total_bits, cfg)
    if positions.size == 0:
        return out
    offsets = np.cumsum([0] + [s.total_bits for s in out.sections])
    which = np.searchsorted(offsets, positions, side="right") - 1
    for si, section in enumerate(out.sections):
        local = positions[which == si] - offsets[si]
        if local.size == 0:
            continue
        if section.encoding == "bin":
            section.data[local] ^= 1
            continue
        idx = local // section.bits_per_value
        bit = local % section.bits_per_value
        if section.encoding == "f32":
            np.bitwise_xor.at(section.data, idx, (np.uint32(1) << bit.astype(np.uint32)))
        else:
            bits = section.bits_per_value
            mask = (1 << bits) - 1
            enc = section.data & mask
            np.bitwise_xor.at(enc, idx, np.int64(1) << bit)
            section.data = enc - ((enc >> (bits - 1)) & 1) * (1 << bits)
    return out


def corrupt_network(net: NetworkGraph, cfg: FaultConfig) -> NetworkGraph:
    """Flip bits in the targeted parameter tensors; the source net is untouched."""
    image = flip_bits(encode_network(net, cfg.target), cfg)
    by_layer: dict[str, dict] = {}
    for section in image.sections:
        by_layer.setdefault(section.layer, {})[section.param] = section

    nodes = []
    for node in net.nodes:
        if isinstance(node, LayerNode) and node.name in by_layer:
            params = dict(node.spec.params)
            for pname, section in by_layer[node.name].items():
                params[pname] = _decode_tensor(section, node.spec.params[pname])
            nodes.append(LayerNode(node.name, replace(node.spec, params=params)))
        else:
            nodes.append(node)
    return NetworkGraph(nodes, net.mode, net.cfg)


def expected_flip_check(image: MemoryImage, cfg: FaultConfig, trials: int) -> float:
    """Statistical self-test: mean flipped fraction over keyed trials."""
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    total = image.total_bits
    flipped = 0
    for t in range(trials):
        corrupted = flip_bits(image, replace(cfg, trial_index=t))
        flipped += image.diff_bits(corrupted)
    return flipped / (trials * total)
