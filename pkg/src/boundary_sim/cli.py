"""Command-line front end.

Exit status: 0 on success, 2 when flags or the weight file are invalid,
1 for any other failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import bench, errors
from .core import default_weights_text, parse_weights
from .report import atomic_write, csv_text, emit_comparison, emit_report, plot_payload_lines
from .stats import summarize

DEFAULT_SEED = 0
SEED_ENV = "BOUNDARY_SIM_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV} must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _ratio(text: str) -> tuple[int, int]:
    a, sep, b = text.partition(":")
    try:
        pair = (int(a), int(b))
    except ValueError:
        pair = None
    if not sep or pair is None or min(pair) < 0 or sum(pair) == 0:
        raise argparse.ArgumentTypeError(f"expected SETS:GETS, got {text!r}")
    return pair


def _size_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    try:
        return int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boundary-sim",
        description="Simulate application/kernel boundary configurations and benchmark them.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--weights", type=Path, help="weight table (default: bundled)")
    common.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (default {DEFAULT_SEED}, or ${SEED_ENV})")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--plot", action="store_true", help="also write SVG plots")

    configs = argparse.ArgumentParser(add_help=False)
    configs.add_argument("--config", action="append", default=None,
                         help="comma list of flags, e.g. ret,byp,pf_df (repeatable)")
    configs.add_argument("--baseline", choices=("trap", "linked"), default=None)

    p = sub.add_parser("micro", parents=[common, configs], help="syscall microbenchmark")
    p.add_argument("--op", choices=bench.MICRO_OPS, default="getppid")
    p.add_argument("--payload", type=int, default=None)
    p.add_argument("--iters", type=int, default=bench.DEFAULT_ITERS)

    p = sub.add_parser("pf", parents=[common, configs], help="page-fault benchmark")
    p.add_argument("--npages", type=int, default=256)
    p.add_argument("--region", choices=("stack", "mmap"), default="stack")

    p = sub.add_parser("kv", parents=[common, configs], help="KV server macro benchmark")
    p.add_argument("--clients", type=int, default=bench.KV_CLIENTS)
    p.add_argument("--requests", type=int, default=bench.KV_REQUESTS)
    p.add_argument("--set-get", type=_ratio, default=bench.KV_SET_GET)
    p.add_argument("--sla", type=int, default=None, help="p99 SLA in cycles: run a load sweep")
    p.add_argument("--loads", type=_int_list, default=[1, 2, 4, 8, 16, 32])

    p = sub.add_parser("ring", parents=[common, configs], help="three-party ring workload")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--msg-size", type=_size_range, default=bench.RING_MSG_RANGE)
    p.add_argument("--no-noise", action="store_true", help="disable background processes")

    p = sub.add_parser("sweep", parents=[common, configs], help="payload sweep for one I/O op")
    p.add_argument("--op", choices=bench.MICRO_OPS[1:], default="read")
    p.add_argument("--payloads", type=_int_list, default=list(bench.PAYLOADS))
    p.add_argument("--iters", type=int, default=1000)

    p = sub.add_parser("compare", parents=[common], help="improvement of configs over a baseline")
    p.add_argument("--baseline", default="trap", help="baseline config (default trap)")
    p.add_argument("--against", action="append", required=True)
    p.add_argument("--workload", default="micro:getppid",
                   help="micro:OP[:PAYLOAD], pf:REGION[:NPAGES], kv, or ring[:ROWS]")
    p.add_argument("--iters", type=int, default=bench.DEFAULT_ITERS)
    return parser


def _profiles(args) -> list[bench.Profile]:
    texts = args.config or ["trap"]
    return [bench.parse_profile(t, args.baseline) for t in texts]


def _weights(args):
    if args.weights is None:
        text, source = default_weights_text(), "weights.txt"
    else:
        try:
            text = args.weights.read_text()
        except OSError as exc:
            raise errors.WeightFileError(f"{args.weights}: {exc.strerror}") from None
        source = str(args.weights)
    return parse_weights(text, source), text


def _run_workload(spec: str, profile, args, weights, seed):
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    if kind == "micro":
        op = parts[0] if parts else "getppid"
        payload = int(parts[1]) if len(parts) > 1 else (0 if op == "getppid" else 1)
        return bench.run_micro(profile, op, payload, args.iters, weights=weights, seed=seed)
    if kind == "pf":
        region = parts[0] if parts else "stack"
        npages = int(parts[1]) if len(parts) > 1 else 256
        return bench.run_pagefault_bench(profile, npages, region, weights=weights, seed=seed)
    if kind == "kv":
        return bench.run_kv_bench(profile, weights=weights, seed=seed).samples
    if kind == "ring":
        rows = int(parts[0]) if parts else 1000
        return bench.run_ring_bench(profile, rows, weights=weights, seed=seed).samples
    raise errors.ConfigError(f"unknown workload {spec!r}")


def _table(header, rows) -> None:
    print(csv_text(header, rows), end="")


def _execute(args) -> list[Path]:
    weights, weights_text = _weights(args)
    seed = args.seed if args.seed is not None else _default_seed()
    out: Path = args.out
    written: list[Path] = []

    if args.command == "compare":
        base = bench.parse_profile(args.baseline)
        others = [bench.parse_profile(t) for t in args.against]
        ref = _run_workload(args.workload, base, args, weights, seed)
        rows = []
        for prof in others:
            rows.append(bench.compare(ref, _run_workload(args.workload, prof, args, weights, seed)))
        written.append(emit_comparison(rows, args.format, out))
        _table(("workload", "baseline", "config", "improvement_pct"),
               [(r["workload"], r["baseline"], r["config"], f"{r['improvement_pct']:.2f}")
                for r in rows])
    else:
        profiles = _profiles(args)
        samples = []
        if args.command == "micro":
            payload = args.payload if args.payload is not None else (0 if args.op == "getppid" else 1)
            samples = [bench.run_micro(p, args.op, payload, args.iters, weights=weights, seed=seed)
                       for p in profiles]
        elif args.command == "pf":
            samples = [bench.run_pagefault_bench(p, args.npages, args.region, weights=weights, seed=seed)
                       for p in profiles]
        elif args.command == "kv" and args.sla is not None:
            sweeps = [bench.kv_load_sweep(p, args.loads, args.requests, args.sla,
                                          weights=weights, seed=seed) for p in profiles]
            _table(("config", "clients", "throughput_per_mcycle", "p99"),
                   [(s.profile, n, f"{tp:.3f}", p99) for s in sweeps for n, tp, p99 in s.points])
            for s in sweeps:
                print(f"# {s.profile}: max load under SLA {s.sla_cycles} = {s.max_load}")
            for p in profiles:
                rep = bench.run_kv_bench(p, max(args.loads), args.requests, args.set_get,
                                         weights=weights, seed=seed)
                samples.append(rep.samples)
        elif args.command == "kv":
            rows = []
            for p in profiles:
                rep = bench.run_kv_bench(p, args.clients, args.requests, args.set_get,
                                         weights=weights, seed=seed)
                rows.append((rep.profile, f"{rep.throughput:.3f}", rep.stats.p99, rep.state_hash[:16]))
                samples.append(rep.samples)
            _table(("config", "throughput_per_mcycle", "p99", "state_hash"), rows)
        elif args.command == "ring":
            rows = []
            for p in profiles:
                rep = bench.run_ring_bench(p, args.rows, args.msg_size, weights=weights, seed=seed,
                                           noise=not args.no_noise)
                rows.append((rep.profile, rep.total_cycles, f"{rep.stats.mean:.1f}", f"{rep.stats.cv:.4f}"))
                samples.append(rep.samples)
            _table(("config", "total_cycles", "mean_round", "cv"), rows)
        elif args.command == "sweep":
            series = {}
            for p in profiles:
                points = []
                for n in args.payloads:
                    s = bench.run_micro(p, args.op, n, args.iters, weights=weights, seed=seed)
                    samples.append(s)
                    points.append((n, summarize(s).mean))
                series[p.label] = points
            if args.plot:
                written.append(plot_payload_lines(series, out / "payload.svg"))
        written = emit_report(samples, args.format, out, plot=args.plot) + written
    written.append(atomic_write(out / "weights.txt", weights_text))
    return written


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        written = _execute(args)
    except (errors.ConfigError, errors.WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except errors.SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    print(f"wall-clock {time.perf_counter() - started:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
