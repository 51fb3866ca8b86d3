import numpy as np
import pytest

from binq import (
    DegenerateScale,
    DegenerateSigma,
    FloatTensor,
    GraphShapeError,
    build_conventional,
    eliminate_qd_pairs,
    make_float_graph,
    pack_signs,
    save_model,
    transform_network,
)
from binq.graph import DNode, LayerNode, NetworkGraph, QNode, quantized_input_domains
from binq.layers import MODE_FLOAT, LayerKind, LayerSpec

from conftest import grid_inputs, pixel_inputs


def mini_net(seed=0, zero_sigma=False):
    """Small Eq.3-shaped net: conv -> bn -> sign -> bconv -> bn -> rprelu ->
    flatten -> linear -> argmax, on 6x6 single-channel inputs."""
    rng = np.random.default_rng(seed)
    c = 4
    sigma1 = np.full(c, 1e-4 if zero_sigma else 1.2, dtype=np.float32)
    specs = [
        LayerSpec(LayerKind.FIRST_CONV, "L",
                  {"W": FloatTensor(rng.normal(0, 0.4, (c, 1, 3, 3)))}, 1, 1),
        LayerSpec(LayerKind.BATCHNORM, "S", {
            "W": FloatTensor(rng.uniform(0.5, 1.5, c)),
            "B": FloatTensor(rng.normal(0, 0.2, c)),
            "mu": FloatTensor(rng.normal(0, 0.5, c)),
            "sigma": FloatTensor(sigma1)}),
        LayerSpec(LayerKind.SIGN, "S"),
        LayerSpec(LayerKind.BINARY_CONV, "L",
                  {"W": pack_signs(rng.choice((-1, 1), (c, c, 3, 3)).astype(np.int8))}, 1, 1),
        LayerSpec(LayerKind.BATCHNORM, "S", {
            "W": FloatTensor(rng.uniform(0.5, 1.5, c)),
            "B": FloatTensor(rng.normal(0, 0.2, c)),
            "mu": FloatTensor(rng.normal(0, 2.0, c)),
            "sigma": FloatTensor(rng.uniform(1.0, 4.0, c))}),
        LayerSpec(LayerKind.RPRELU, "S", {
            "W": FloatTensor(rng.uniform(0.1, 0.5, c)),
            "B1": FloatTensor(rng.normal(0, 0.3, c)),
            "B2": FloatTensor(rng.normal(0, 0.3, c))}),
        LayerSpec(LayerKind.FLATTEN, "S"),
        LayerSpec(LayerKind.LINEAR, "L",
                  {"W": FloatTensor(rng.normal(0, 0.2, (3, c * 36)))}),
        LayerSpec(LayerKind.ARGMAX, "S"),
    ]
    return make_float_graph(specs)


class TestStructureValidation:
    def test_toy_net_is_valid(self, toy_float):
        assert toy_float.node_count() == 14

    def test_missing_sign_before_binary_conv(self):
        net = mini_net()
        specs = [s for s in net.layers if s.kind is not LayerKind.SIGN]
        with pytest.raises(GraphShapeError):
            make_float_graph(specs)

    def test_consecutive_l_layers(self):
        net = mini_net()
        specs = [s for s in net.layers if s.kind not in
                 (LayerKind.BATCHNORM, LayerKind.RPRELU, LayerKind.FLATTEN)]
        with pytest.raises(GraphShapeError):
            make_float_graph(specs)

    def test_must_end_with_argmax(self):
        with pytest.raises(GraphShapeError):
            make_float_graph(mini_net().layers[:-1])

    def test_interior_l_must_be_binary(self):
        specs = mini_net().layers
        bad = list(specs)
        extra = [specs[0], specs[1]] + bad  # two FirstConvs
        with pytest.raises(GraphShapeError):
            make_float_graph(extra)

    def test_domain_walk(self, toy_float):
        domains = quantized_input_domains(toy_float)
        names = [n.name for n in toy_float.layer_nodes]
        got = [domains[n] for n in names]
        assert got == ["real", "q", "q", "bin", "real", "q", "q", "bin",
                       "real", "q", "q", "q", "q", "q"]


class TestBuildConventional:
    def test_one_q_one_d_per_quantized_layer(self, toy_float):
        conv = build_conventional(toy_float, 16)
        qs = [n for n in conv.nodes if isinstance(n, QNode)]
        ds = [n for n in conv.nodes if isinstance(n, DNode)]
        quantized = [s for s in toy_float.layers if s.kind in
                     (LayerKind.FIRST_CONV, LayerKind.LINEAR,
                      LayerKind.BATCHNORM, LayerKind.RPRELU)]
        assert len(qs) == len(ds) == len(quantized) == 7
        assert conv.node_count() == toy_float.node_count() + 2 * len(quantized)

    def test_qd_roundtrip_error_bound(self, toy_float):
        conv = build_conventional(toy_float, 16)
        delta = conv.cfg.delta
        rng = np.random.default_rng(0)
        x = rng.uniform(-delta * 30000, delta * 30000, size=2048)
        from binq import dequantize_array, quantize_array

        err = np.abs(dequantize_array(quantize_array(x, conv.cfg), conv.cfg) - x)
        assert np.all(err <= delta / 2 + 1e-12)

    def test_argmax_agreement_with_float_net(self, toy_float):
        conv = build_conventional(toy_float, 16)
        x = pixel_inputs(np.random.default_rng(5), 256)
        agree = np.mean(conv.predict(x) == toy_float.predict(x))
        assert agree >= 0.95


class TestTransform:
    def test_node_count_preserved(self, toy_float, toy_zobnn):
        assert toy_zobnn.node_count() == toy_float.node_count()
        assert toy_zobnn.kind_sequence() == toy_float.kind_sequence()

    def test_no_conversion_nodes_remain(self, toy_zobnn):
        assert all(isinstance(n, LayerNode) for n in toy_zobnn.nodes)

    def test_log_accounts_for_every_eliminated_node(self, toy_float):
        conv = build_conventional(toy_float, 16)
        zob, log = transform_network(toy_float, 16)
        eliminated = conv.node_count() - zob.node_count()
        assert log.nodes_eliminated == eliminated == 14
        kinds = sorted(s.kind for s in log.steps)
        assert kinds == sorted(["qd-pair"] * 4 + ["input-q", "output-d"]
                               + ["sign-d"] * 2 + ["dual-mode-q"] * 2)

    def test_source_net_untouched(self, toy_float):
        before = save_model(toy_float)
        transform_network(toy_float, 16)
        assert save_model(toy_float) == before

    def test_binary_weights_shared_not_copied(self, toy_float):
        zob, _ = transform_network(toy_float, 16)
        src = [s for s in toy_float.layers if s.kind is LayerKind.BINARY_CONV]
        dst = [s for s in zob.layers if s.kind is LayerKind.BINARY_CONV]
        for a, b in zip(src, dst):
            assert a.param("W") is b.param("W")

    def test_identity_network_unchanged(self):
        net = NetworkGraph([LayerNode("argmax0", LayerSpec(LayerKind.ARGMAX, "S"))],
                           MODE_FLOAT)
        zob, log = transform_network(net, 16)
        assert zob.node_count() == 1 and log.steps == []

    def test_degenerate_scale(self):
        specs = [
            LayerSpec(LayerKind.FIRST_CONV, "L",
                      {"W": FloatTensor(np.zeros((2, 1, 3, 3), dtype=np.float32))}, 1, 1),
            LayerSpec(LayerKind.SIGN, "S"),
            LayerSpec(LayerKind.BINARY_CONV, "L",
                      {"W": pack_signs(np.ones((2, 2, 3, 3), dtype=np.int8))}, 1, 1),
            LayerSpec(LayerKind.FLATTEN, "S"),
            LayerSpec(LayerKind.LINEAR, "L",
                      {"W": FloatTensor(np.zeros((3, 2 * 36), dtype=np.float32))}),
            LayerSpec(LayerKind.ARGMAX, "S"),
        ]
        net = make_float_graph(specs)
        with pytest.raises(DegenerateScale):
            transform_network(net, 8)

    def test_degenerate_sigma_refused(self):
        net = mini_net(zero_sigma=True)  # sigma 1e-4 in a grid-input batchnorm
        with pytest.raises(DegenerateSigma):
            transform_network(net, 8)

    def test_rejects_non_float_source(self, toy_zobnn):
        with pytest.raises(GraphShapeError):
            transform_network(toy_zobnn, 16)


class TestEquivalenceChain:
    def test_logits_and_argmax_match_on_grid_inputs(self):
        net = mini_net(seed=3)
        conv = build_conventional(net, 16)
        eq5, _ = eliminate_qd_pairs(conv)
        zob, _ = transform_network(net, 16)
        rng = np.random.default_rng(9)
        x = grid_inputs(rng, zob.cfg, (64, 1, 6, 6), span=20000)
        p4, l4 = conv.forward(x)
        p5, l5 = eq5.forward(x)
        p6, l6 = zob.forward(x)
        d = zob.cfg.delta
        assert np.array_equal(p4, p5) and np.array_equal(p5, p6)
        assert np.max(np.abs(l4 / d - l6)) <= 1
        assert np.max(np.abs(l5 / d - l6)) <= 1

    def test_toy_net_chain_on_grid_inputs(self, toy_float, toy_zobnn):
        conv = build_conventional(toy_float, 16)
        rng = np.random.default_rng(10)
        x = grid_inputs(rng, toy_zobnn.cfg, (32, 1, 28, 28), span=30000)
        p4, l4 = conv.forward(x)
        p6, l6 = toy_zobnn.forward(x)
        assert np.array_equal(p4, p6)
        assert np.max(np.abs(l4 / toy_zobnn.cfg.delta - l6)) <= 1

    def test_agreement_monotone_in_bits(self, toy_float):
        x = pixel_inputs(np.random.default_rng(11), 256)
        base = toy_float.predict(x)
        agreement = []
        for bits in (8, 10, 12, 14, 16):
            zob, _ = transform_network(toy_float, bits)
            agreement.append(np.mean(zob.predict(x) == base))
        # statistical trend: tolerate one binomial std-error per step
        se = np.sqrt(np.array(agreement) * (1 - np.array(agreement)) / x.shape[0])
        for i in range(len(agreement) - 1):
            assert agreement[i + 1] >= agreement[i] - max(se[i], se[i + 1])
        assert agreement[-1] > agreement[0]
        assert agreement[-1] >= 0.99
