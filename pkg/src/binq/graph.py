"""Network graph: ordered layer nodes plus optional grid-conversion nodes.

A graph is a list of nodes executed in order. Float and zobnn graphs contain
only layer nodes; the conventional-quantization reference graph interleaves
explicit Q (real -> grid) and D (grid -> real) nodes around every quantized
layer. The executor carries activations as plain arrays - float dtype means
real domain, int64 means grid domain - and PackedBitTensor for the binary
domain, so dual-mode layers dispatch on what actually arrives.

Grid round trips are computed in float64, which keeps Q(D(gamma)) == gamma
exact far beyond the parameter range; that exactness is what the rewrite
pass relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphShapeError, ShapeError
from .layers import (
    L_TYPE_KINDS,
    MODE_FLOAT,
    LayerKind,
    LayerSpec,
    argmax_output,
    batchnorm_core,
    batchnorm_float_core,
    binary_conv_core,
    first_conv_core,
    last_linear_core,
    maxpool_core,
    rprelu_core,
    rprelu_float_core,
    sign_core,
)
from .quantize import QuantConfig
from .tensors import (
    FloatTensor,
    PackedBitTensor,
    _conv_geometry,
    round_half_away,
)


@dataclass
class LayerNode:
    name: str
    spec: LayerSpec


@dataclass
class QNode:
    """Entry into the grid domain.

    Regular form divides by delta and rounds. The unit-scale form snaps
    already-integer real values to the grid without rescaling; it precedes
    S-type layers that consume raw binary-convolution sums.
    """

    name: str
    delta: float
    unit_scale: bool = False


@dataclass
class DNode:
    name: str
    delta: float


class NetworkGraph:
    """Ordered node list with an execution mode and quantization config."""

    def __init__(self, nodes: list, mode: str, cfg: QuantConfig | None = None):
        self.nodes = list(nodes)
        self.mode = mode
        self.cfg = cfg

    @property
    def layer_nodes(self) -> list[LayerNode]:
        return [n for n in self.nodes if isinstance(n, LayerNode)]

    @property
    def layers(self) -> list[LayerSpec]:
        return [n.spec for n in self.layer_nodes]

    def layer(self, name: str) -> LayerSpec:
        for n in self.layer_nodes:
            if n.name == name:
                return n.spec
        raise KeyError(name)

    def node_count(self) -> int:
        return len(self.nodes)

    def kind_sequence(self) -> list[str]:
        return [n.spec.kind.value for n in self.layer_nodes]

    def forward(self, x: np.ndarray):
        """Run a batch through the graph.

        `x` is an (N, C, H, W) array; integer dtypes are treated as raw pixel
        values in the real domain. Returns (predictions, logits) where logits
        is the tensor entering the final ArgMax, in whatever domain the final
        layer produced.
        """
        act = np.asarray(x)
        if np.issubdtype(act.dtype, np.integer):
            act = act.astype(np.float64)
        elif self.mode != MODE_FLOAT:
            act = act.astype(np.float64)
        else:
            act = act.astype(np.float32)
        logits = None
        # corrupted parameters may inject NaN/Inf; they must flow, not warn
        with np.errstate(all="ignore"):
            for node in self.nodes:
                if isinstance(node, QNode):
                    if node.unit_scale:
                        act = round_half_away(np.asarray(act, np.float64)).astype(np.float64)
                    else:
                        act = round_half_away(np.asarray(act, np.float64) / node.delta)
                elif isinstance(node, DNode):
                    act = np.asarray(act, np.float64) * node.delta
                else:
                    spec = node.spec
                    if spec.kind is LayerKind.ARGMAX:
                        logits = act
                        act = argmax_output(act)
                    else:
                        act = _run_layer(act, spec, self.cfg, self.mode)
        if logits is None:
            raise GraphShapeError("graph has no ArgMax output layer")
        return act, logits

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


def _is_grid(act) -> bool:
    return isinstance(act, np.ndarray) and np.issubdtype(act.dtype, np.integer)


def _run_layer(act, spec: LayerSpec, cfg, mode: str):
    kind = spec.kind
    if kind is LayerKind.SIGN:
        if isinstance(act, PackedBitTensor):
            raise GraphShapeError("sign applied to an already-binary activation")
        return sign_core(act)
    if kind is LayerKind.BINARY_CONV:
        if not isinstance(act, PackedBitTensor):
            raise GraphShapeError("binary conv requires a binarized input")
        return binary_conv_core(act, spec).astype(np.float64)
    if isinstance(act, PackedBitTensor):
        raise GraphShapeError(f"{kind.value} cannot consume a binary activation")
    if kind is LayerKind.MAXPOOL:
        return maxpool_core(act, spec)
    if kind is LayerKind.FLATTEN:
        return act.reshape(act.shape[0], -1)
    if mode == MODE_FLOAT:
        return _run_float_layer(act, spec)
    quant_in = _is_grid(act)
    if kind is LayerKind.FIRST_CONV:
        return first_conv_core(act, quant_in, spec, cfg)
    if kind is LayerKind.LINEAR:
        return last_linear_core(act, quant_in, spec, cfg)
    if kind is LayerKind.BATCHNORM:
        return batchnorm_core(act, quant_in, spec)
    if kind is LayerKind.RPRELU:
        return rprelu_core(act, quant_in, spec)
    raise GraphShapeError(f"unsupported layer kind {kind}")


def _run_float_layer(act, spec: LayerSpec):
    kind = spec.kind
    if kind in (LayerKind.FIRST_CONV, LayerKind.LINEAR):
        w = spec.param("W")
        if not isinstance(w, FloatTensor):
            raise GraphShapeError(f"float execution requires float weights in {kind.value}")
        if kind is LayerKind.FIRST_CONV:
            from .tensors import _im2col

            n, c, co, kh, kw, oh, ow = _conv_geometry(
                act.shape, w.shape, spec.stride, spec.padding)
            patches = _im2col(act.astype(np.float64), kh, kw, spec.stride, spec.padding)
            out = patches.reshape(-1, c * kh * kw) @ w.data.astype(np.float64).reshape(co, -1).T
            return out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2).astype(np.float32)
        if act.ndim != 2 or act.shape[1] != w.shape[1]:
            raise ShapeError(f"linear shapes {act.shape} x {w.shape} do not chain")
        return (act.astype(np.float64) @ w.data.astype(np.float64).T).astype(np.float32)
    if kind is LayerKind.BATCHNORM:
        return np.asarray(batchnorm_float_core(act, spec), dtype=np.float32)
    if kind is LayerKind.RPRELU:
        return np.asarray(rprelu_float_core(act, spec), dtype=np.float32)
    raise GraphShapeError(f"unsupported layer kind {kind}")


# ---------------------------------------------------------------------------
# structure validation and the quantized-execution domain walk
# ---------------------------------------------------------------------------

S_TYPE_KINDS = {LayerKind.SIGN, LayerKind.BATCHNORM, LayerKind.RPRELU,
                LayerKind.MAXPOOL, LayerKind.FLATTEN}

QUANTIZABLE_KINDS = {LayerKind.FIRST_CONV, LayerKind.LINEAR,
                     LayerKind.BATCHNORM, LayerKind.RPRELU}


def make_float_graph(specs: list[LayerSpec]) -> NetworkGraph:
    """Wrap layer specs (mixed binary/float form) into a float-mode graph."""
    nodes = [LayerNode(f"{s.kind.value.lower()}{i}", s) for i, s in enumerate(specs)]
    g = NetworkGraph(nodes, MODE_FLOAT)
    validate_structure(g)
    return g


def validate_structure(net: NetworkGraph) -> None:
    """Check the mixed-precision layer alternation.

    First L-type layer is FirstConv, last is Linear, interior L-type layers
    are binary convolutions fed by a sign layer; at least one S-type layer
    separates consecutive L-type layers; ArgMax terminates the graph.
    """
    specs = net.layers
    if not specs or specs[-1].kind is not LayerKind.ARGMAX:
        raise GraphShapeError("network must end with an ArgMax layer")
    body = specs[:-1]
    if any(s.kind is LayerKind.ARGMAX for s in body):
        raise GraphShapeError("ArgMax may appear only as the final layer")
    l_positions = [i for i, s in enumerate(body) if s.kind in L_TYPE_KINDS]
    if len(l_positions) < 2:
        raise GraphShapeError("network needs at least a first and a last L-type layer")
    if body[l_positions[0]].kind is not LayerKind.FIRST_CONV:
        raise GraphShapeError("first L-type layer must be FirstConv")
    if body[l_positions[-1]].kind is not LayerKind.LINEAR:
        raise GraphShapeError("last L-type layer must be Linear")
    for i in l_positions[1:-1]:
        if body[i].kind is not LayerKind.BINARY_CONV:
            raise GraphShapeError("interior L-type layers must be binary convolutions")
    for a, b in zip(l_positions, l_positions[1:]):
        if b - a < 2:
            raise GraphShapeError("consecutive L-type layers need an S-type layer between them")
    for i, s in enumerate(body):
        if s.kind is LayerKind.BINARY_CONV:
            if i == 0 or body[i - 1].kind is not LayerKind.SIGN:
                raise GraphShapeError("each binary convolution must directly follow a sign layer")
    quantized_input_domains(net)  # raises on inconsistent domain flow


def quantized_input_domains(net: NetworkGraph) -> dict[str, str]:
    """Input domain ('real' | 'q' | 'bin') each layer sees in quantized execution."""
    domains: dict[str, str] = {}
    d = "real"
    for node in net.layer_nodes:
        kind = node.spec.kind
        domains[node.name] = d
        if kind in (LayerKind.FIRST_CONV, LayerKind.LINEAR,
                    LayerKind.BATCHNORM, LayerKind.RPRELU):
            if d == "bin":
                raise GraphShapeError(f"{kind.value} cannot consume a binary activation")
            d = "q"
        elif kind is LayerKind.SIGN:
            if d == "bin":
                raise GraphShapeError("sign applied to an already-binary activation")
            d = "bin"
        elif kind is LayerKind.BINARY_CONV:
            if d != "bin":
                raise GraphShapeError("binary conv requires a binarized input")
            d = "real"
        elif kind in (LayerKind.MAXPOOL, LayerKind.FLATTEN):
            if d == "bin":
                raise GraphShapeError(f"{kind.value} cannot consume a binary activation")
        elif kind is LayerKind.ARGMAX:
            if d == "bin":
                raise GraphShapeError("ArgMax cannot consume a binary activation")
    return domains
