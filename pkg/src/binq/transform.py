"""Graph rewriting: mixed-precision float form -> conventional -> zobnn.

The conventional reference wraps every quantized layer in explicit grid
conversions. Each conversion the rewrite removes is an exact identity at the
point it sits:

  * a D feeding a Q between quantized layers cancels by reciprocity,
    including across max-pool/flatten, which commute with the positive scale;
  * the D feeding a sign layer cannot change any sign;
  * the final D cannot change an argmax;
  * the unit-scale Q in front of an S-type layer that consumes raw binary
    convolution sums snaps integers to integers;
  * the entry Q is absorbed by running the first convolution directly on the
    real input (exact whenever the input is grid-representable).

What remains is the zobnn graph: the source graph's node sequence with
quantized parameter stores and no conversion nodes at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateSigma, GraphShapeError
from .graph import (
    DNode,
    LayerNode,
    NetworkGraph,
    QNode,
    quantized_input_domains,
    validate_structure,
)
from .layers import (
    MODE_CONVENTIONAL,
    MODE_FLOAT,
    MODE_ZOBNN,
    LayerKind,
)
from .quantize import QuantConfig, compute_delta, quantize_tensor
from .tensors import FloatTensor, round_half_away


@dataclass(frozen=True)
class TransformStep:
    kind: str            # "qd-pair" | "input-q" | "output-d" | "sign-d" | "dual-mode-q"
    layer: str           # the layer the rewrite touched
    nodes: tuple[str, ...]  # conversion nodes removed by this step


@dataclass
class TransformLog:
    steps: list[TransformStep] = field(default_factory=list)

    @property
    def nodes_eliminated(self) -> int:
        return sum(len(s.nodes) for s in self.steps)


_TRANSPARENT = {LayerKind.MAXPOOL, LayerKind.FLATTEN}


def _quantized_param_names(kind: LayerKind, domain: str) -> tuple[str, ...]:
    """Which of a layer's parameters move onto the grid, by input domain."""
    if kind in (LayerKind.FIRST_CONV, LayerKind.LINEAR):
        return ("W",)
    if kind is LayerKind.BATCHNORM:
        return ("W", "B", "mu", "sigma") if domain == "q" else ("W", "B")
    if kind is LayerKind.RPRELU:
        return ("B1", "B2") if domain == "q" else ("W", "B2")
    return ()


def prepare_quantization(net: NetworkGraph, bits: int):
    """Compute the global scale and build the quantized layer specs.

    Returns (cfg, new layer nodes). The same parameter stores back both the
    conventional and zobnn graphs, which is what makes the rewrite exact.
    """
    if net.mode != MODE_FLOAT:
        raise GraphShapeError(f"transform expects a float-mode source, got {net.mode}")
    domains = quantized_input_domains(net)

    pool = []
    plan: list[tuple[LayerNode, tuple[str, ...]]] = []
    for node in net.layer_nodes:
        names = _quantized_param_names(node.spec.kind, domains[node.name])
        plan.append((node, names))
        for pname in names:
            p = node.spec.param(pname)
            if not isinstance(p, FloatTensor):
                raise GraphShapeError(
                    f"{node.name}.{pname} must be a float parameter in the source net")
            pool.append(p.data)
        if node.spec.kind is LayerKind.RPRELU and "W" in names:
            # the implicit unit branch of W is quantized too; keep it in range
            pool.append(np.ones(1))
    if not pool:
        # nothing to quantize (e.g. a bare ArgMax head): the rewrite is an identity
        return None, [LayerNode(n.name, replace(n.spec)) for n in net.layer_nodes]
    validate_structure(net)
    cfg = QuantConfig(bits, compute_delta(pool, bits))

    for node, names in plan:
        if node.spec.kind is LayerKind.BATCHNORM and "sigma" in names:
            sigma_q = round_half_away(
                node.spec.param("sigma").data.astype(np.float64) / cfg.delta)
            if np.any(sigma_q == 0):
                raise DegenerateSigma(
                    f"{node.name}: sigma quantizes to zero at {bits} bits; "
                    f"use a wider bit width")

    new_nodes = []
    for node, names in plan:
        params = dict(node.spec.params)
        for pname in names:
            params[pname] = quantize_tensor(params[pname], cfg)
        new_nodes.append(LayerNode(node.name, replace(node.spec, params=params)))
    return cfg, new_nodes


def wrap_conventional(net: NetworkGraph) -> NetworkGraph:
    """Insert one Q and one D around every quantized layer of a quantized net."""
    cfg = net.cfg
    domains = quantized_input_domains(net)
    nodes: list = []
    for i, node in enumerate(net.layer_nodes):
        spec = replace(node.spec, mode=MODE_CONVENTIONAL)
        if spec.kind in (LayerKind.FIRST_CONV, LayerKind.LINEAR,
                         LayerKind.BATCHNORM, LayerKind.RPRELU):
            unit = domains[node.name] == "real" and i > 0
            nodes.append(QNode(f"q:{node.name}", cfg.delta, unit_scale=unit))
            nodes.append(LayerNode(node.name, spec))
            nodes.append(DNode(f"d:{node.name}", cfg.delta))
        else:
            nodes.append(LayerNode(node.name, spec))
    return NetworkGraph(nodes, MODE_CONVENTIONAL, cfg)


def build_conventional(net: NetworkGraph, bits: int = 16) -> NetworkGraph:
    """Literal conversion-wrapped pipeline built from a float-mode source."""
    cfg, layer_nodes = prepare_quantization(net, bits)
    return wrap_conventional(NetworkGraph(layer_nodes, MODE_CONVENTIONAL, cfg))


def eliminate_qd_pairs(net: NetworkGraph):
    """Remove every D-then-Q identity (Eq. 9), commuting past pool/reshape."""
    nodes = list(net.nodes)
    steps: list[TransformStep] = []
    changed = True
    while changed:
        changed = False
        for i, node in enumerate(nodes):
            if not isinstance(node, DNode):
                continue
            j = i + 1
            while j < len(nodes) and isinstance(nodes[j], LayerNode) \
                    and nodes[j].spec.kind in _TRANSPARENT:
                j += 1
            if j < len(nodes) and isinstance(nodes[j], QNode) and not nodes[j].unit_scale:
                steps.append(TransformStep(
                    "qd-pair", nodes[j].name.split(":", 1)[1], (node.name, nodes[j].name)))
                del nodes[j]
                del nodes[i]
                changed = True
                break
    out = NetworkGraph(nodes, net.mode, net.cfg)
    return out, steps


def _absorb_remaining(net: NetworkGraph):
    nodes = list(net.nodes)
    steps: list[TransformStep] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        if isinstance(node, QNode):
            layer = node.name.split(":", 1)[1]
            if node.unit_scale:
                steps.append(TransformStep("dual-mode-q", layer, (node.name,)))
            elif i == 0:
                steps.append(TransformStep("input-q", layer, (node.name,)))
            else:
                raise GraphShapeError(f"unabsorbable Q node {node.name}")
            del nodes[i]
            continue
        if isinstance(node, DNode):
            layer = node.name.split(":", 1)[1]
            nxt = nodes[i + 1] if i + 1 < len(nodes) else None
            if isinstance(nxt, LayerNode) and nxt.spec.kind is LayerKind.SIGN:
                steps.append(TransformStep("sign-d", layer, (node.name,)))
            elif isinstance(nxt, LayerNode) and nxt.spec.kind is LayerKind.ARGMAX:
                steps.append(TransformStep("output-d", layer, (node.name,)))
            else:
                raise GraphShapeError(f"unabsorbable D node {node.name}")
            del nodes[i]
            continue
        i += 1
    return nodes, steps


def transform_network(net: NetworkGraph, bits: int = 16):
    """Rewrite a float-mode graph into the conversion-free zobnn form.

    Returns (zobnn graph, TransformLog). The source graph is untouched;
    binary interior weights are shared, not copied.
    """
    conventional = build_conventional(net, bits)
    eq5, pair_steps = eliminate_qd_pairs(conventional)
    nodes, absorb_steps = _absorb_remaining(eq5)
    log = TransformLog(pair_steps + absorb_steps)

    out_nodes = [LayerNode(n.name, replace(n.spec, mode=MODE_ZOBNN)) for n in nodes]
    zobnn = NetworkGraph(out_nodes, MODE_ZOBNN, conventional.cfg)

    if any(not isinstance(n, LayerNode) for n in zobnn.nodes):
        raise GraphShapeError("rewrite left conversion nodes behind")
    if zobnn.kind_sequence() != net.kind_sequence():
        raise GraphShapeError("rewrite changed the layer sequence")
    if zobnn.node_count() != net.node_count():
        raise GraphShapeError("rewrite changed the operation count")
    return zobnn, log
