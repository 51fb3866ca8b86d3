import numpy as np
import pytest

from binq import FloatTensor, PackedBitTensor, QuantConfig, QuantTensor, ShapeError
from binq.layers import (
    MODE_FLOAT,
    MODE_ZOBNN,
    LayerKind,
    LayerSpec,
    argmax_output,
    batchnorm_core,
    batchnorm_float_core,
    batchnorm_forward,
    first_conv_core,
    first_conv_forward,
    last_linear_core,
    rprelu_core,
    rprelu_float_core,
    rprelu_forward,
    sign_forward,
)
from binq.tensors import conv2d_float, maxpool2d, round_half_away, unpack_signs

DELTA = 1.0 / 256  # power of two: dequantized parameters are exact in float32
CFG = QuantConfig(8, DELTA)


def qt(values, shape=None):
    arr = np.asarray(values, dtype=np.int64)
    if shape:
        arr = arr.reshape(shape)
    return QuantTensor(arr, CFG.delta, CFG.bits)


def bn_spec_q(w, b, mu, sigma, mode=MODE_ZOBNN):
    return LayerSpec(LayerKind.BATCHNORM, "S",
                     {"W": qt(w), "B": qt(b), "mu": qt(mu), "sigma": qt(sigma)},
                     mode=mode)


def bn_spec_real(w, b, mu, sigma):
    return LayerSpec(LayerKind.BATCHNORM, "S",
                     {"W": qt(w), "B": qt(b),
                      "mu": FloatTensor(np.asarray(mu, dtype=np.float32)),
                      "sigma": FloatTensor(np.asarray(sigma, dtype=np.float32))},
                     mode=MODE_ZOBNN)


class TestBatchnorm:
    def test_identity_affine(self):
        x = qt([[7, -3, 0, 12]], (1, 4))
        spec = bn_spec_q([1, 1, 1, 1], [0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1])
        out = batchnorm_forward(x, spec)
        assert isinstance(out, QuantTensor)
        assert np.array_equal(out.values, x.values)

    def test_hand_arithmetic(self):
        spec = bn_spec_q([2], [3], [2], [4])
        out = batchnorm_core(np.array([[10]], dtype=np.int64), True, spec)
        assert out[0, 0] == 7  # 2*(10-2)/4 + 3

    def test_scale_consistency_vs_float_oracle(self):
        rng = np.random.default_rng(1)
        c = 6
        w, b = rng.integers(-100, 100, c), rng.integers(-50, 50, c)
        mu, sigma = rng.integers(-80, 80, c), rng.integers(5, 120, c)
        xq = rng.integers(-5000, 5000, size=(3, c, 4, 4))
        gamma = batchnorm_core(xq, True, bn_spec_q(w, b, mu, sigma))
        float_spec = LayerSpec(LayerKind.BATCHNORM, "S", {
            "W": FloatTensor(w * DELTA), "B": FloatTensor(b * DELTA),
            "mu": FloatTensor(mu * DELTA), "sigma": FloatTensor(sigma * DELTA)},
            mode=MODE_FLOAT)
        y = batchnorm_float_core(xq.astype(np.float64) * DELTA, float_spec)
        assert np.max(np.abs(gamma - round_half_away(y / DELTA))) <= 1

    def test_scale_commutation_bound(self):
        # D(f_zobnn(x_q)) within delta/2 of f_float(D(x_q)) with dequantized params
        rng = np.random.default_rng(2)
        c = 4
        w, b = rng.integers(-100, 100, c), rng.integers(-50, 50, c)
        mu, sigma = rng.integers(-80, 80, c), rng.integers(5, 120, c)
        xq = rng.integers(-4000, 4000, size=(2, c))
        gamma = batchnorm_core(xq, True, bn_spec_q(w, b, mu, sigma))
        float_spec = LayerSpec(LayerKind.BATCHNORM, "S", {
            "W": FloatTensor(w * DELTA), "B": FloatTensor(b * DELTA),
            "mu": FloatTensor(mu * DELTA), "sigma": FloatTensor(sigma * DELTA)},
            mode=MODE_FLOAT)
        y = batchnorm_float_core(xq.astype(np.float64) * DELTA, float_spec)
        assert np.max(np.abs(gamma * DELTA - y)) <= DELTA / 2 + 1e-9

    def test_real_input_mode(self):
        spec = bn_spec_real([2], [3], [0.5], [2.0])
        out = batchnorm_core(np.array([[8.5]]), False, spec)
        assert out[0, 0] == 3 + round((8.5 - 0.5) * (2 / 2.0))

    def test_dual_mode_closure(self):
        spec_q = bn_spec_q([2, 3], [1, -1], [0, 4], [3, 7])
        spec_r = bn_spec_real([2, 3], [1, -1], [0.1, 0.4], [1.5, 2.0])
        out_q = batchnorm_forward(qt([[5, -5]], (1, 2)), spec_q)
        out_r = batchnorm_forward(FloatTensor(np.array([[0.5, -0.5]], dtype=np.float32)), spec_r)
        assert isinstance(out_q, QuantTensor) and isinstance(out_r, QuantTensor)

    def test_float_mode(self):
        spec = LayerSpec(LayerKind.BATCHNORM, "S", {
            "W": FloatTensor([2.0]), "B": FloatTensor([3.0]),
            "mu": FloatTensor([2.0]), "sigma": FloatTensor([4.0])}, mode=MODE_FLOAT)
        out = batchnorm_forward(FloatTensor(np.array([[10.0]], dtype=np.float32)), spec)
        assert isinstance(out, FloatTensor)
        assert out.data[0, 0] == pytest.approx(7.0)

    def test_domain_store_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            batchnorm_core(np.array([[5]], dtype=np.int64), True, bn_spec_real([1], [0], [0.0], [1.0]))
        with pytest.raises(ShapeError):
            batchnorm_core(np.array([[5.0]]), False, bn_spec_q([1], [0], [0], [1]))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            batchnorm_core(np.ones((1, 3), dtype=np.int64), True, bn_spec_q([1], [0], [0], [1]))


class TestRPReLU:
    def rp_spec_q(self, slope, b1, b2):
        return LayerSpec(LayerKind.RPRELU, "S", {
            "W": FloatTensor(np.asarray(slope, dtype=np.float32)),
            "B1": qt(b1), "B2": qt(b2)}, mode=MODE_ZOBNN)

    def test_identity_in_unit_region(self):
        spec = self.rp_spec_q([0.25], [0], [0])
        x = np.array([[1], [5], [99]], dtype=np.int64)
        assert np.array_equal(rprelu_core(x, True, spec), x)

    def test_hand_arithmetic_slope_branch(self):
        spec = self.rp_spec_q([0.25], [2], [1])
        out = rprelu_core(np.array([[-10]], dtype=np.int64), True, spec)
        assert out[0, 0] == -1  # round(0.25 * (-10 + 2)) + 1

    def test_scale_consistency_vs_float_oracle(self):
        rng = np.random.default_rng(3)
        c = 5
        slope = rng.uniform(0.1, 0.9, c).astype(np.float32)
        b1, b2 = rng.integers(-60, 60, c), rng.integers(-60, 60, c)
        xq = rng.integers(-4000, 4000, size=(4, c))
        gamma = rprelu_core(xq, True, self.rp_spec_q(slope, b1, b2))
        float_spec = LayerSpec(LayerKind.RPRELU, "S", {
            "W": FloatTensor(slope), "B1": FloatTensor(b1 * DELTA),
            "B2": FloatTensor(b2 * DELTA)}, mode=MODE_FLOAT)
        y = rprelu_float_core(xq.astype(np.float64) * DELTA, float_spec)
        assert np.max(np.abs(gamma - round_half_away(y / DELTA))) <= 1

    def test_branch_uses_input_domain(self):
        # quantized branch threshold compares x_q against -B1_q directly
        spec = self.rp_spec_q([0.5], [3], [0])
        just_above = rprelu_core(np.array([[-2]], dtype=np.int64), True, spec)
        just_below = rprelu_core(np.array([[-4]], dtype=np.int64), True, spec)
        assert just_above[0, 0] == 1    # unit branch: -2 + 3
        assert just_below[0, 0] == -1   # round-half-away(0.5 * (-4 + 3))

    def test_real_input_mode_quantizes_unit_branch(self):
        spec = LayerSpec(LayerKind.RPRELU, "S", {
            "W": qt([64]),  # slope 0.25 on the grid
            "B1": FloatTensor([0.5]), "B2": qt([8])}, mode=MODE_ZOBNN)
        x = np.array([[1.0]])
        out = rprelu_core(x, False, spec)
        unit_q = min(round(1.0 / DELTA), CFG.qmax)  # Q saturates at the range edge
        assert unit_q == 127
        assert out[0, 0] == 191 + 8  # half-away(127 * 1.5) + B2

    def test_emits_quant_tensor(self):
        spec = self.rp_spec_q([0.25, 0.5], [0, 1], [0, -2])
        out = rprelu_forward(qt([[3, -3]], (1, 2)), spec)
        assert isinstance(out, QuantTensor)


class TestSign:
    def test_zero_maps_to_plus_one(self):
        out = sign_forward(FloatTensor(np.array([0.0], dtype=np.float32)))
        assert unpack_signs(out)[0] == 1

    def test_negative_preserved_across_domains(self):
        assert unpack_signs(sign_forward(FloatTensor(np.array([-3.7], dtype=np.float32))))[0] == -1
        q = qt([int(round(-3.7 / DELTA))])
        assert unpack_signs(sign_forward(q))[0] == -1

    def test_scale_invariance_bulk(self):
        rng = np.random.default_rng(4)
        xq = rng.integers(-1000, 1000, size=(1000, 17))
        a = sign_forward(QuantTensor(xq, DELTA, 8))
        b = sign_forward(FloatTensor((xq * DELTA).astype(np.float32)))
        assert np.array_equal(unpack_signs(a), unpack_signs(b))

    def test_output_is_packed(self):
        assert isinstance(sign_forward(qt([1, -1, 0])), PackedBitTensor)


class TestArgmax:
    def test_simple(self):
        assert argmax_output(FloatTensor(np.array([1.0, 2.0, 3.0], dtype=np.float32))) == 2

    def test_tie_breaks_low(self):
        assert argmax_output(FloatTensor(np.array([5.0, 5.0, 1.0], dtype=np.float32))) == 0

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(5)
        q = rng.integers(-10000, 10000, size=(1000, 10))
        assert np.array_equal(argmax_output(QuantTensor(q, DELTA, 16)),
                              argmax_output(FloatTensor((q * DELTA).astype(np.float32))))

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            argmax_output(np.empty((0,)))


class TestQuantizedLTypeLayers:
    def conv_spec(self, wq):
        return LayerSpec(LayerKind.FIRST_CONV, "L", {"W": qt(wq)}, stride=1, padding=0,
                         mode=MODE_ZOBNN)

    def test_zero_weights(self):
        spec = self.conv_spec(np.zeros((2, 1, 3, 3), dtype=np.int64))
        x = np.random.default_rng(0).integers(0, 256, size=(1, 1, 5, 5)).astype(np.float64)
        assert np.all(first_conv_core(x, False, spec, CFG) == 0)

    def test_one_by_one_kernel_pixel(self):
        spec = self.conv_spec(np.full((1, 1, 1, 1), 3, dtype=np.int64))
        out = first_conv_core(np.full((1, 1, 1, 1), 10.0), False, spec, CFG)
        assert out[0, 0, 0, 0] == 30

    def test_real_input_float_oracle(self):
        rng = np.random.default_rng(6)
        wq = rng.integers(-127, 128, size=(4, 1, 3, 3))
        spec = self.conv_spec(wq)
        x = rng.integers(0, 256, size=(2, 1, 8, 8)).astype(np.float64)
        gamma = first_conv_core(x, False, spec, CFG)
        want = conv2d_float(FloatTensor(x), FloatTensor(wq * DELTA)).data
        nonzero = np.abs(want) > 1e-3
        rel = np.abs(gamma * DELTA - want)[nonzero] / np.abs(want)[nonzero]
        assert np.max(rel) < 1e-4

    def test_quant_input_rescales_once(self):
        rng = np.random.default_rng(7)
        wq = rng.integers(-127, 128, size=(3, 2, 3, 3))
        spec = self.conv_spec(wq)
        xq = rng.integers(-500, 500, size=(1, 2, 6, 6))
        gamma = first_conv_core(xq, True, spec, CFG)
        want = conv2d_float(FloatTensor(xq * DELTA), FloatTensor(wq * DELTA)).data
        assert np.max(np.abs(gamma * DELTA - want)) <= DELTA / 2 + 1e-6

    def test_wrapper_emits_quant(self):
        spec = self.conv_spec(np.full((1, 1, 1, 1), 2, dtype=np.int64))
        out = first_conv_forward(FloatTensor(np.ones((1, 1, 2, 2), dtype=np.float32)), spec)
        assert isinstance(out, QuantTensor)

    def test_linear_both_domains(self):
        rng = np.random.default_rng(8)
        wq = rng.integers(-127, 128, size=(5, 7))
        spec = LayerSpec(LayerKind.LINEAR, "L", {"W": qt(wq)}, mode=MODE_ZOBNN)
        xq = rng.integers(-300, 300, size=(3, 7))
        gamma = last_linear_core(xq, True, spec, CFG)
        want = (xq * DELTA) @ (wq * DELTA).T
        assert np.max(np.abs(gamma * DELTA - want)) <= DELTA / 2 + 1e-6
        xr = rng.normal(size=(3, 7))
        gamma_r = last_linear_core(xr, False, spec, CFG)
        assert np.max(np.abs(gamma_r - xr @ wq.T)) <= 0.5 + 1e-9

    def test_linear_shape_error(self):
        spec = LayerSpec(LayerKind.LINEAR, "L", {"W": qt(np.ones((5, 7), dtype=np.int64))},
                         mode=MODE_ZOBNN)
        with pytest.raises(ShapeError):
            last_linear_core(np.ones((2, 6)), False, spec, CFG)


class TestMaxpoolCommutation:
    def test_exact_grid_commutation(self):
        rng = np.random.default_rng(9)
        xq = rng.integers(-1000, 1000, size=(2, 3, 6, 6))
        pooled_q = maxpool2d(xq, 2)
        pooled_r = maxpool2d(xq.astype(np.float64) * DELTA, 2)
        assert np.array_equal(pooled_q, round_half_away(pooled_r / DELTA))
