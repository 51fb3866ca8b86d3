"""Experiment campaigns: fault-rate sweeps, footprints, overhead benchmarks.

A sweep corrupts a fresh copy of each variant for every (rate, trial) with a
trial-keyed fault config, evaluates the metric over a fixed eval set, and
aggregates order statistics. Results are reduced in (variant, rate, trial)
order, so a sweep is bit-identical for a fixed seed regardless of worker
count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput
from .faults import FaultConfig, corrupt_network, encode_network, flip_count
from .graph import NetworkGraph
from .layers import PARAM_ORDER
from .modelio import DatasetBatch
from .tensors import FloatTensor, PackedBitTensor, QuantTensor

DEFAULT_RATES = (1e-6, 4e-6, 1e-5, 4e-5, 1e-4, 4e-4, 1e-3)

METRIC_ACCURACY = "accuracy"
METRIC_DEVIATION = "deviation"  # argmax-deviation rate vs the fault-free run


@dataclass(frozen=True)
class SweepSpec:
    rates: tuple = DEFAULT_RATES
    trials: int = 500
    seed: int = 0
    metric: str = METRIC_ACCURACY
    variants: tuple = ("zobnn",)
    eval_count: int = 512
    target: str = "all"
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError("rates must lie in [0, 1]")
        if self.metric not in (METRIC_ACCURACY, METRIC_DEVIATION):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class RateStats:
    experiment: str
    rate: float
    values: np.ndarray
    flips: np.ndarray

    @property
    def stats(self) -> dict:
        d = distribution_stats(self.values)
        d["mean"] = float(np.mean(self.values))
        return d


@dataclass
class TrialReport:
    spec: SweepSpec
    baselines: dict
    results: list[RateStats] = field(default_factory=list)

    def stats_for(self, variant: str, rate: float) -> RateStats:
        for r in self.results:
            if r.experiment == variant and r.rate == rate:
                return r
        raise KeyError((variant, rate))

    def trial_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            for t, (v, f) in enumerate(zip(r.values, r.flips)):
                rows.append({"experiment": r.experiment, "rate": r.rate,
                             "trial": t, "value": float(v), "flipped_bits": int(f)})
        return rows

    def aggregate_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            s = r.stats
            rows.append({"experiment": r.experiment, "rate": r.rate,
                         "trials": len(r.values), "mean": s["mean"],
                         "median": s["median"], "q1": s["q1"], "q3": s["q3"],
                         "min": s["min"], "max": s["max"], "seed": self.spec.seed})
        return rows


def distribution_stats(values) -> dict:
    """Median, quartiles (linear interpolation), min and max."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("no values to summarize")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "min": float(arr.min()), "max": float(arr.max())}


def evaluate_accuracy(net: NetworkGraph, images: np.ndarray, labels: np.ndarray,
                      batch: int = 1024) -> float:
    correct = 0
    for i in range(0, len(labels), batch):
        correct += int(np.sum(net.predict(images[i:i + batch]) == labels[i:i + batch]))
    return correct / len(labels)


def _one_trial(net, x, labels, baseline_preds, metric, cfg, total_bits):
    with np.errstate(all="ignore"):  # NaN/Inf flow through float paths unchanged
        corrupted = corrupt_network(net, cfg)
        preds = corrupted.predict(x)
    if metric == METRIC_ACCURACY:
        value = float(np.mean(preds == labels))
    else:
        value = float(np.mean(preds != baseline_preds))
    return value, flip_count(total_bits, cfg)


def _trial_task(args):
    return _one_trial(*args)


def run_sweep(spec: SweepSpec, nets: dict, dataset: DatasetBatch) -> TrialReport:
    """Corrupt-evaluate-aggregate over every (variant, rate, trial)."""
    if len(dataset) == 0:
        raise EmptyInput("dataset is empty")
    n = min(spec.eval_count, len(dataset))
    x = dataset.inputs()[:n]
    labels = dataset.labels[:n]

    baselines = {}
    results = []
    tasks = []
    order = []
    for variant in spec.variants:
        net = nets[variant]
        with np.errstate(all="ignore"):
            baseline_preds = net.predict(x)
        baselines[variant] = float(np.mean(baseline_preds == labels))
        total_bits = encode_network(net, spec.target).total_bits
        for rate in spec.rates:
            for trial in range(spec.trials):
                cfg = FaultConfig(rate, spec.seed, trial, spec.target)
                tasks.append((net, x, labels, baseline_preds, spec.metric, cfg, total_bits))
                order.append((variant, rate))

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(_trial_task, tasks, chunksize=8))
    else:
        outcomes = [_one_trial(*t) for t in tasks]

    i = 0
    for variant in spec.variants:
        for rate in spec.rates:
            chunk = outcomes[i:i + spec.trials]
            i += spec.trials
            results.append(RateStats(
                variant, rate,
                np.array([v for v, _ in chunk], dtype=np.float64),
                np.array([f for _, f in chunk], dtype=np.int64)))
    return TrialReport(spec, baselines, results)


# ---------------------------------------------------------------------------
# memory footprint
# ---------------------------------------------------------------------------


@dataclass
class FootprintReport:
    per_layer: dict        # layer name -> stored bits
    total_bits: int
    float_equivalent_bits: int  # same net with every non-binary parameter at 32 bits

    @property
    def reduction(self) -> float:
        return 1.0 - self.total_bits / self.float_equivalent_bits


def _param_bits(t) -> tuple[int, int]:
    """(stored bits, float-equivalent bits) for one parameter tensor."""
    if isinstance(t, FloatTensor):
        return 32 * t.size, 32 * t.size
    if isinstance(t, QuantTensor):
        return t.bits * t.size, 32 * t.size
    if isinstance(t, PackedBitTensor):
        return t.size, t.size  # binary weights are 1 bit in every variant
    raise TypeError(f"cannot account for parameter of type {type(t)!r}")


def footprint(net: NetworkGraph) -> FootprintReport:
    """Stored parameter bits per layer, totals, and reduction vs all-float."""
    per_layer = {}
    total = 0
    float_total = 0
    for node in net.layer_nodes:
        bits = 0
        for pname in PARAM_ORDER[node.spec.kind]:
            stored, as_float = _param_bits(node.spec.param(pname))
            bits += stored
            float_total += as_float
        per_layer[node.name] = bits
        total += bits
    return FootprintReport(per_layer, total, float_total)


# ---------------------------------------------------------------------------
# runtime overhead
# ---------------------------------------------------------------------------


def bench_overhead(nets: dict, x_single: np.ndarray, repeats: int = 20) -> dict:
    """Node counts and mean single-input latency per variant.

    Checks the zero-overhead contract: the rewritten graph has exactly the
    float graph's node count, and the conventional pipeline is strictly
    larger.
    """
    if repeats < 20:
        raise ValueError("need at least 20 repeats for a stable mean")
    out = {}
    for name, net in nets.items():
        for _ in range(3):
            net.predict(x_single)  # warmup
        t0 = time.perf_counter()
        for _ in range(repeats):
            net.predict(x_single)
        mean_ms = (time.perf_counter() - t0) / repeats * 1e3
        out[name] = {"nodes": net.node_count(), "mean_ms": mean_ms}
    if "float" in out and "zobnn" in out \
            and out["zobnn"]["nodes"] != out["float"]["nodes"]:
        raise AssertionError("rewritten graph must match the float node count")
    if "conventional" in out:
        for other in ("float", "zobnn"):
            if other in out and out["conventional"]["nodes"] <= out[other]["nodes"]:
                raise AssertionError(
                    "conventional pipeline must carry extra conversion nodes")
    return out


def default_workers() -> int:
    return os.cpu_count() or 1
