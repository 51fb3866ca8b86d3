import numpy as np
import pytest

from binq import (
    DatasetBatch,
    EmptyInput,
    SweepSpec,
    bench_overhead,
    build_conventional,
    distribution_stats,
    footprint,
    run_sweep,
    transform_network,
)

from conftest import pixel_inputs


def tiny_dataset(n=64, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    return DatasetBatch(images, labels)


class TestDistributionStats:
    def test_order_statistics(self):
        s = distribution_stats([1, 2, 3, 4, 5])
        assert (s["median"], s["q1"], s["q3"]) == (3.0, 2.0, 4.0)
        assert (s["min"], s["max"]) == (1.0, 5.0)

    def test_constant_list(self):
        s = distribution_stats([7.0] * 10)
        assert len({s["median"], s["q1"], s["q3"], s["min"], s["max"]}) == 1

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            distribution_stats([])


class TestFootprint:
    def test_float_net_is_32_bits_per_param_plus_binary(self, toy_float):
        rep = footprint(toy_float)
        # geometry: conv 144, bn 64+64+128, rprelu 48+96, linear 15680 float params
        float_params = 144 + 64 + 64 + 128 + 48 + 96 + 15680
        binary_params = 16 * 16 * 9 + 32 * 16 * 9
        assert rep.total_bits == float_params * 32 + binary_params
        assert rep.total_bits == 526080
        assert rep.float_equivalent_bits == rep.total_bits
        assert rep.reduction == 0.0

    def test_zobnn16_hand_accounting(self, toy_zobnn):
        rep = footprint(toy_zobnn)
        # quantized: conv 144, bn1 all four 64, bn2/bn3 W+B 32+64,
        # rprelu B1+B2 32+64, linear 15680 -> 16080 params at 16 bits
        # float kept: bn2/bn3 mu+sigma 32+64, rprelu slopes 16+32 -> 144 at 32 bits
        assert rep.total_bits == 16080 * 16 + 144 * 32 + 6912
        assert rep.total_bits == 268800
        assert rep.float_equivalent_bits == 526080
        assert rep.reduction == pytest.approx(1 - 268800 / 526080)

    def test_reduction_monotone_as_bits_shrink(self, toy_float):
        totals = []
        for bits in (16, 14, 12, 10, 8):
            net, _ = transform_network(toy_float, bits)
            totals.append(footprint(net).total_bits)
        assert all(b < a for a, b in zip(totals, totals[1:]))


class TestRunSweep:
    def test_rate_zero_equals_baseline_zero_variance(self, toy_zobnn):
        data = tiny_dataset()
        spec = SweepSpec(rates=(0.0,), trials=5, eval_count=32, variants=("zobnn",))
        report = run_sweep(spec, {"zobnn": toy_zobnn}, data)
        stats = report.stats_for("zobnn", 0.0)
        assert np.all(stats.values == report.baselines["zobnn"])
        assert stats.stats["min"] == stats.stats["max"]
        assert np.all(stats.flips == 0)

    def test_single_trial_stats_collapse(self, toy_zobnn):
        data = tiny_dataset()
        spec = SweepSpec(rates=(1e-3,), trials=1, eval_count=32, variants=("zobnn",))
        report = run_sweep(spec, {"zobnn": toy_zobnn}, data)
        s = report.stats_for("zobnn", 1e-3).stats
        assert s["median"] == s["mean"] == s["min"] == s["max"]

    def test_deviation_metric_zero_at_rate_zero(self, toy_zobnn):
        data = tiny_dataset()
        spec = SweepSpec(rates=(0.0,), trials=2, eval_count=32,
                         variants=("zobnn",), metric="deviation")
        report = run_sweep(spec, {"zobnn": toy_zobnn}, data)
        assert np.all(report.stats_for("zobnn", 0.0).values == 0.0)

    def test_deterministic_and_worker_independent(self, toy_zobnn):
        data = tiny_dataset()
        spec1 = SweepSpec(rates=(1e-3, 1e-2), trials=4, eval_count=24,
                          variants=("zobnn",), seed=5)
        r1 = run_sweep(spec1, {"zobnn": toy_zobnn}, data)
        r2 = run_sweep(spec1, {"zobnn": toy_zobnn}, data)
        spec2 = SweepSpec(rates=(1e-3, 1e-2), trials=4, eval_count=24,
                          variants=("zobnn",), seed=5, workers=2)
        r3 = run_sweep(spec2, {"zobnn": toy_zobnn}, data)
        for a, b in ((r1, r2), (r1, r3)):
            for ra, rb in zip(a.results, b.results):
                assert np.array_equal(ra.values, rb.values)
                assert np.array_equal(ra.flips, rb.flips)

    def test_mean_degradation_monotone_in_rate(self, toy_zobnn):
        # deviation-rate means rise with P (one std-error slack per step)
        data = tiny_dataset(128)
        spec = SweepSpec(rates=(1e-4, 1e-3, 1e-2), trials=24, eval_count=128,
                         variants=("zobnn",), metric="deviation", seed=3)
        report = run_sweep(spec, {"zobnn": toy_zobnn}, data)
        means, ses = [], []
        for rate in spec.rates:
            v = report.stats_for("zobnn", rate).values
            means.append(v.mean())
            ses.append(v.std(ddof=1) / np.sqrt(len(v)))
        for i in range(len(means) - 1):
            assert means[i + 1] >= means[i] - max(ses[i], ses[i + 1])

    def test_row_shapes(self, toy_zobnn):
        data = tiny_dataset()
        spec = SweepSpec(rates=(1e-3, 1e-2), trials=3, eval_count=16, variants=("zobnn",))
        report = run_sweep(spec, {"zobnn": toy_zobnn}, data)
        assert len(report.trial_rows()) == 6
        aggs = report.aggregate_rows()
        assert len(aggs) == 2
        assert set(aggs[0]) == {"experiment", "rate", "trials", "mean", "median",
                                "q1", "q3", "min", "max", "seed"}

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SweepSpec(trials=0)
        with pytest.raises(ValueError):
            SweepSpec(rates=(2.0,))
        with pytest.raises(ValueError):
            SweepSpec(metric="bogus")


class TestBenchOverhead:
    def test_node_counts_and_shapes(self, toy_float, toy_zobnn):
        conv = build_conventional(toy_float, 16)
        x = pixel_inputs(np.random.default_rng(0), 1)
        out = bench_overhead({"float": toy_float, "zobnn": toy_zobnn,
                              "conventional": conv}, x, repeats=20)
        assert out["float"]["nodes"] == out["zobnn"]["nodes"] == 14
        assert out["conventional"]["nodes"] == 28
        assert all(row["mean_ms"] > 0 for row in out.values())

    def test_repeats_floor(self, toy_float):
        with pytest.raises(ValueError):
            bench_overhead({"float": toy_float},
                           pixel_inputs(np.random.default_rng(0), 1), repeats=5)
