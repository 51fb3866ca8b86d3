"""Command-line entry point.

Subcommands: transform, infer, inject, sweep, footprint, bench, selftest.
Exit codes: 0 success, 1 usage error, 2 data/model error. Every command that
consumes randomness prints its effective seed, and identical invocations on
identical files produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import BinqError
from .faults import FaultConfig, MemoryImage, Section, corrupt_network, expected_flip_check
from .graph import NetworkGraph
from .harness import (
    DEFAULT_RATES,
    METRIC_ACCURACY,
    METRIC_DEVIATION,
    SweepSpec,
    bench_overhead,
    default_workers,
    evaluate_accuracy,
    footprint,
    run_sweep,
)
from .layers import MODE_CONVENTIONAL, MODE_FLOAT, MODE_ZOBNN
from .modelio import (
    load_idx_dataset,
    load_model_file,
    save_model_file,
    write_report_csv,
    write_report_json,
)
from .quantize import QuantConfig, dequantize_array, quantize_array
from .transform import build_conventional, transform_network


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="binq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transform", help="quantize a float model into zobnn form")
    t.add_argument("--model", required=True)
    t.add_argument("--bits", type=int, default=16)
    t.add_argument("--out", required=True)
    t.add_argument("--conventional", action="store_true",
                   help="emit the conversion-wrapped reference pipeline instead")

    i = sub.add_parser("infer", help="evaluate accuracy on an IDX dataset")
    i.add_argument("--model", required=True)
    i.add_argument("--images", required=True)
    i.add_argument("--labels", required=True)
    i.add_argument("--limit", type=int, default=0)

    j = sub.add_parser("inject", help="write a bit-flip-corrupted copy of a model")
    j.add_argument("--model", required=True)
    j.add_argument("--rate", type=float, required=True)
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--trial", type=int, default=0)
    j.add_argument("--target", default="all")
    j.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="fault-rate sweep campaign")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--rates", default=",".join(repr(r) for r in DEFAULT_RATES))
    s.add_argument("--trials", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--metric", choices=["acc", "dev"], default="acc")
    s.add_argument("--variants", default="")
    s.add_argument("--bits", type=int, default=16)
    s.add_argument("--eval", type=int, default=512)
    s.add_argument("--target", default="all")
    s.add_argument("--workers", type=int, default=default_workers())
    s.add_argument("--report", required=True)
    s.add_argument("--format", choices=["csv", "json"], default="csv")

    f = sub.add_parser("footprint", help="stored parameter bits per layer")
    f.add_argument("--model", required=True)

    b = sub.add_parser("bench", help="node counts and single-input latency")
    b.add_argument("--model", required=True)
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--bits", type=int, default=16)
    b.add_argument("--seed", type=int, default=0)

    sub.add_parser("selftest", help="reciprocity and injector statistics checks")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (BinqError, OverflowError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def _check_bits(bits: int) -> None:
    if not 2 <= bits <= 16:
        raise _UsageError(f"--bits must be in [2, 16], got {bits}")


def _dispatch(args) -> int:
    return {
        "transform": _cmd_transform,
        "infer": _cmd_infer,
        "inject": _cmd_inject,
        "sweep": _cmd_sweep,
        "footprint": _cmd_footprint,
        "bench": _cmd_bench,
        "selftest": _cmd_selftest,
    }[args.command](args)


def _cmd_transform(args) -> int:
    _check_bits(args.bits)
    net = load_model_file(args.model)
    if args.conventional:
        out = build_conventional(net, args.bits)
        print(f"conventional pipeline: {out.node_count()} nodes "
              f"({out.node_count() - len(out.layers)} conversion nodes)")
    else:
        out, log = transform_network(net, args.bits)
        print(f"zobnn form: {out.node_count()} nodes, "
              f"{log.nodes_eliminated} conversion nodes eliminated in {len(log.steps)} steps")
        for step in log.steps:
            print(f"  {step.kind:12s} {step.layer:14s} removed {', '.join(step.nodes)}")
    print(f"delta: {out.cfg.delta!r}  bits: {out.cfg.bits}")
    save_model_file(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_infer(args) -> int:
    net = load_model_file(args.model)
    data = load_idx_dataset(args.images, args.labels)
    n = args.limit if args.limit > 0 else len(data)
    acc = evaluate_accuracy(net, data.inputs()[:n], data.labels[:n])
    print(f"accuracy: {acc:.4f} over {min(n, len(data))} images ({net.mode} mode)")
    return 0


def _cmd_inject(args) -> int:
    print(f"seed: {args.seed}")
    net = load_model_file(args.model)
    cfg = FaultConfig(args.rate, args.seed, args.trial, args.target)
    corrupted = corrupt_network(net, cfg)
    save_model_file(corrupted, args.out)
    print(f"wrote {args.out} (rate {args.rate}, trial {args.trial}, target {args.target})")
    return 0


def _derive_variants(net: NetworkGraph, names: list[str], bits: int) -> dict:
    nets = {}
    for name in names:
        if name == net.mode:
            nets[name] = net
        elif net.mode == MODE_FLOAT and name == MODE_ZOBNN:
            nets[name], _ = transform_network(net, bits)
        elif net.mode == MODE_FLOAT and name == MODE_CONVENTIONAL:
            nets[name] = build_conventional(net, bits)
        else:
            raise _UsageError(
                f"variant {name!r} cannot be derived from a {net.mode}-mode model")
    return nets


def _cmd_sweep(args) -> int:
    print(f"seed: {args.seed}")
    _check_bits(args.bits)
    net = load_model_file(args.model)
    data = load_idx_dataset(args.images, args.labels)
    try:
        rates = tuple(float(r) for r in args.rates.split(",") if r)
    except ValueError:
        raise _UsageError(f"bad --rates list {args.rates!r}") from None
    variants = tuple(v for v in args.variants.split(",") if v) or (net.mode,)
    metric = METRIC_ACCURACY if args.metric == "acc" else METRIC_DEVIATION
    spec = SweepSpec(rates=rates, trials=args.trials, seed=args.seed, metric=metric,
                     variants=variants, eval_count=args.eval, target=args.target,
                     workers=args.workers)
    nets = _derive_variants(net, list(variants), args.bits)
    report = run_sweep(spec, nets, data)
    for variant in variants:
        print(f"{variant}: fault-free {metric} metric baseline "
              f"accuracy {report.baselines[variant]:.4f}")
    for r in report.results:
        s = r.stats
        print(f"  {r.experiment:12s} P={r.rate:<8g} mean={s['mean']:.4f} "
              f"median={s['median']:.4f} iqr={s['q3'] - s['q1']:.4f}")
    if args.format == "csv":
        write_report_csv(args.report, report.trial_rows(), report.aggregate_rows())
    else:
        write_report_json(args.report, report.aggregate_rows())
    print(f"wrote {args.report}")
    return 0


def _cmd_footprint(args) -> int:
    net = load_model_file(args.model)
    rep = footprint(net)
    for layer, bits in rep.per_layer.items():
        print(f"  {layer:16s} {bits:>10d} bits")
    print(f"total: {rep.total_bits} bits ({rep.total_bits / 8192:.1f} KiB)")
    print(f"float-equivalent: {rep.float_equivalent_bits} bits")
    print(f"reduction: {rep.reduction * 100:.1f}%")
    return 0


def _cmd_bench(args) -> int:
    print(f"seed: {args.seed}")
    _check_bits(args.bits)
    if args.repeats < 20:
        raise _UsageError(f"--repeats must be >= 20, got {args.repeats}")
    net = load_model_file(args.model)
    if net.mode != MODE_FLOAT:
        raise _UsageError("bench needs a float-mode model to derive all variants")
    nets = _derive_variants(net, [MODE_FLOAT, MODE_CONVENTIONAL, MODE_ZOBNN], args.bits)
    rng = np.random.default_rng(args.seed)
    first_w = net.layers[0].param("W")
    x = rng.integers(0, 256, size=(1, first_w.shape[1], 28, 28)) / 255.0
    results = bench_overhead(nets, x, args.repeats)
    for name, row in results.items():
        print(f"  {name:14s} nodes={row['nodes']:<3d} mean={row['mean_ms']:.3f} ms")
    ratio = results[MODE_ZOBNN]["mean_ms"] / results[MODE_FLOAT]["mean_ms"]
    overhead = results[MODE_CONVENTIONAL]["mean_ms"] / results[MODE_ZOBNN]["mean_ms"]
    print(f"zobnn/float latency ratio: {ratio:.3f}")
    print(f"conventional/zobnn latency ratio: {overhead:.3f}")
    return 0


def _cmd_selftest(args) -> int:
    print("seed: 0")
    failures = 0
    for bits in (8, 10, 12, 14, 16):
        cfg = QuantConfig(bits, delta=0.013)
        q = np.arange(-cfg.qmax, cfg.qmax + 1, dtype=np.int64)
        ok = bool(np.array_equal(quantize_array(dequantize_array(q, cfg), cfg), q))
        print(f"  reciprocity b={bits:<3d} {'pass' if ok else 'FAIL'}")
        failures += not ok
    image = MemoryImage([Section("self", "w", "f32", 32, (64,),
                                  np.zeros(64, dtype=np.uint32))])
    for rate in (0.0, 0.01, 0.5, 1.0):
        trials = 200
        measured = expected_flip_check(image, FaultConfig(rate, seed=0), trials)
        if rate in (0.0, 1.0):
            ok = measured == rate
        else:
            se = (rate * (1 - rate) / (trials * image.total_bits)) ** 0.5
            ok = abs(measured - rate) <= 3 * se
        print(f"  injector P={rate:<5g} measured={measured:.5f} {'pass' if ok else 'FAIL'}")
        failures += not ok
    if failures:
        print(f"{failures} selftest check(s) failed", file=sys.stderr)
        return 2
    print("selftest ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
