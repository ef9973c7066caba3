"""Command-line entry point: ``splitonion <subcommand> [options]``.

Exit status is 0 on success, 1 when a run fails at runtime and 2 for usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import codec, topo
from .codec import Ctrl, HopMaterial, PacketParams, RoutingSegment
from .replay import ReplayConfig, dimension, size_filter, standard_bloom_bits
from .shaping import PacketKind
from .simnet.config import load_config, split_rate_grid
from .simnet.experiments import (CHAFF_OVERHEAD_HEADER, MIX_LATENCY_HEADER, SPLIT_RATE_HEADER,
                                 experiment_chaff_overhead, experiment_mix_latency,
                                 experiment_split_rate)
from .simnet.sim import run_simulation
from .simnet.topology import ConfigError
from .simnet.workload import kbps_to_pps, synth_flows, synth_workload

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SIMULATE_HEADER = ("flowlet_id", "flow_id", "src", "dst", "hops", "start_ns", "success",
                   "data_sent", "chaff_sent", "split_sent", "delivered_data", "delivered_chaff")
TRACE_HEADER = ("link_id", "time_ns", "length")
TOPOLOGY_HEADER = ("scenario_id", "S_s", "S_d", "S_r")
REPLAY_HEADER = ("bandwidth_bps", "fp", "ttl_s", "avg_pkt", "capacity", "blocks", "hashes",
                 "classic_bytes", "size_bytes", "size_mb")
BENCH_HEADER = ("op", "hops", "m", "iterations", "mean_us", "ops_per_s")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@contextmanager
def _sink(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _write_rows(path, header, rows) -> None:
    with _sink(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header] if isinstance(r, dict) else [_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    if isinstance(x, bool):
        return int(x)
    return x


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    rc = load_config(args.config)
    seed = rc.seed if args.seed is None else args.seed
    topology = rc.network.build(rc.drop, seed)
    wl = synth_workload(rc.profile, rc.flowlet.rate_B, rc.flowlet.lifetime_T, seed)
    if not wl.flowlets:
        raise ConfigError("workload produced no flowlets")
    metrics, trace = run_simulation(topology, wl, seed, rc.sim)
    rows = []
    for f in wl.flowlets:
        c = metrics.sender_counts[f.flowlet_id]
        got = metrics.delivered.get(f.flowlet_id, [])
        rows.append((f.flowlet_id, f.flow_id, f.src, f.dst, len(f.path), f.start_ns,
                     metrics.success[f.flowlet_id], *(c.get(k, 0) for k in PacketKind),
                     sum(1 for _, k, _ in got if k == codec.PayloadKind.DATA),
                     sum(1 for _, k, _ in got if k == codec.PayloadKind.CHAFF)))
    _write_rows(args.out, SIMULATE_HEADER, rows)
    if args.trace:
        taps = sorted((lid, t, n) for lid, items in trace.taps.items() for t, n in items)
        _write_rows(args.trace, TRACE_HEADER, taps)
    summary = metrics.summary()
    print(" ".join(f"{k}={_fmt(v)}" for k, v in summary.items()), file=sys.stderr)
    return EXIT_OK


# -- experiments ------------------------------------------------------------

def cmd_experiment(args) -> int:
    rc = load_config(args.config)
    seed = rc.seed if args.seed is None else args.seed
    if args.kind == "split-rate":
        grid = split_rate_grid(rc, args.reps)
        workers = args.workers if args.workers is not None else int(rc.section("split-rate").get("workers", 0))
        rows = experiment_split_rate(grid, seed, workers)
        _write_rows(args.out, SPLIT_RATE_HEADER, rows)
    elif args.kind == "chaff-overhead":
        sec = rc.section("chaff-overhead")
        profile = rc.profile if "flows" not in sec else replace(rc.profile, flows=sec["flows"])
        flows, _ = synth_flows(profile, seed)
        if not flows:
            raise ConfigError("workload produced no flows")
        rates = sec.get("rates_kbps", [5.0, 10.0, 20.0])
        rows = experiment_chaff_overhead(flows, [kbps_to_pps(r, codec.DEFAULT_PARAMS.packet_len) for r in rates],
                                         sec.get("lifetime_s", rc.flowlet.lifetime_T), seed,
                                         pad_max=sec.get("pad_max", 0),
                                         early_shutdown=sec.get("early_shutdown", True))
        by_rate = dict(zip((kbps_to_pps(r, codec.DEFAULT_PARAMS.packet_len) for r in rates), rates))
        for r in rows:
            r["B"] = by_rate[r["B"]]
        _write_rows(args.out, CHAFF_OVERHEAD_HEADER, rows)
    else:
        sec = rc.section("mix-latency")
        sizes = [int(m) for m in sec.get("batch_sizes", [16, 128])]
        batches = args.reps if args.reps is not None else sec.get("batches", 2000)
        rows = experiment_mix_latency(sizes, sec.get("rate", 1e4), batches, seed)
        _write_rows(args.out, MIX_LATENCY_HEADER, rows)
    return EXIT_OK


# -- topology ---------------------------------------------------------------

def topology_rows(graph: topo.AsGraph, max_len: int = 7) -> list:
    """Every single-AS scenario on every path, then every pair with and without correlation."""
    rows = []
    for pi, path in enumerate(graph.paths):
        obs = {}
        for i, asn in enumerate(path):
            for known in (False, True):
                sc = topo.CompromiseScenario(path, {i}, position_known=known)
                a = topo.anonymity_sets(graph, sc, max_len)
                obs[i, known] = a
                rows.append((f"p{pi}-as{asn}-{'known' if known else 'unknown'}", a.size_s, a.size_d, a.size_r))
        for i, j in itertools.combinations(range(len(path)), 2):
            for corr in (True, False):
                pair = (obs[i, False], obs[j, False])
                if corr:
                    s, d = min(o.size_s for o in pair), min(o.size_d for o in pair)
                else:
                    best = min(pair, key=lambda o: o.size_r)
                    s, d = best.size_s, best.size_d
                sc = topo.CompromiseScenario(path, {i, j}, correlating=corr)
                r = topo.multi_compromise(graph, sc, max_len)
                tag = "corr" if corr else "nocorr"
                rows.append((f"p{pi}-as{path[i]}+as{path[j]}-{tag}", s, d, r))
    return rows


def cmd_analyze_topology(args) -> int:
    if args.graph:
        p = Path(args.graph)
        if not p.is_file():
            raise ConfigError(f"graph file not found: {p}")
        try:
            graph = topo.parse_graph(p.read_text())
        except ValueError as e:
            raise ConfigError(str(e)) from None
    else:
        graph = topo.build_toy_topology()
    if not graph.paths:
        raise ConfigError("graph has no 'path' lines to analyze")
    _write_rows(args.out, TOPOLOGY_HEADER, topology_rows(graph, args.max_len))
    return EXIT_OK


# -- replay sizing ----------------------------------------------------------

def replay_size_row(bandwidth_bps: float, fp: float, ttl: float, avg_pkt: float) -> dict:
    # each sub-filter takes the packets of one ttl/2 epoch
    capacity = max(1, round(bandwidth_bps / (8 * avg_pkt) * ttl / 2))
    cfg = ReplayConfig(ttl, fp, capacity)
    blocks, k = dimension(cfg)
    size = size_filter(cfg)
    return {"bandwidth_bps": bandwidth_bps, "fp": fp, "ttl_s": ttl, "avg_pkt": avg_pkt,
            "capacity": capacity, "blocks": blocks, "hashes": k,
            "classic_bytes": round(3 * standard_bloom_bits(capacity, fp) / 8),
            "size_bytes": size, "size_mb": size / 1e6}


def cmd_replay_size(args) -> int:
    for name in ("bandwidth", "fp", "ttl", "avg_pkt"):
        if getattr(args, name) <= 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.fp >= 1:
        raise UsageError("--fp must be below 1")
    _write_rows(args.out, REPLAY_HEADER, [replay_size_row(args.bandwidth, args.fp, args.ttl, args.avg_pkt)])
    return EXIT_OK


# -- codec benchmark --------------------------------------------------------

def _timed(fn, iterations: int) -> float:
    t0 = time.perf_counter()
    for _ in range(iterations):
        fn()
    return (time.perf_counter() - t0) / iterations


def bench_codec(hops: int, m: int, iterations: int, seed: int = 0) -> list:
    params = PacketParams(m=m)
    rng = np.random.default_rng(seed)
    svs = [rng.bytes(16) for _ in range(hops)]
    mats = []
    for i, sv in enumerate(svs):
        s = rng.bytes(16)
        mats.append(HopMaterial(s, codec.fs_create(sv, s, RoutingSegment(i, i + 1))))
    exps = [2**31] * hops
    iv = rng.bytes(16)
    payload = rng.bytes(m)
    ctrls = [Ctrl.FWD] * hops
    pkt = codec.create_onion(params, mats, ctrls, exps, iv, payload, rng)
    k = max(1, hops // 2)
    split_pkt = codec.create_splittable(params, mats, exps, iv, rng.bytes(16), rng.bytes(16),
                                        rng.bytes(params.child_payload_len), rng.bytes(params.child_payload_len),
                                        k, rng) if hops > 1 else None
    at_k = split_pkt
    for i in range(k):
        if at_k is not None:
            at_k = codec.remove_layer(params, at_k, svs[i]).next_packet

    ops = [("create_onion", lambda: codec.create_onion(params, mats, ctrls, exps, iv, payload, rng)),
           ("remove_layer", lambda: codec.remove_layer(params, pkt, svs[0]))]
    if at_k is not None:
        def split():
            out = codec.remove_layer(params, at_k, svs[k])
            return codec.split_onion(params, out.next_packet.payload, out.s, out.iv)
        ops.append(("create_splittable", lambda: codec.create_splittable(
            params, mats, exps, iv, iv, iv, bytes(params.child_payload_len), bytes(params.child_payload_len), k, rng)))
        ops.append(("remove_layer_split", split))
    rows = []
    for name, fn in ops:
        fn()  # warm-up
        dt = _timed(fn, iterations)
        rows.append({"op": name, "hops": hops, "m": m, "iterations": iterations,
                     "mean_us": dt * 1e6, "ops_per_s": 1.0 / dt if dt > 0 else float("inf")})
    return rows


def cmd_bench_codec(args) -> int:
    if not 1 <= args.hops <= codec.DEFAULT_PARAMS.max_hops:
        raise UsageError(f"--hops must be in 1..{codec.DEFAULT_PARAMS.max_hops}")
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    try:
        rows = bench_codec(args.hops, args.payload, args.iterations, args.seed or 0)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _write_rows(args.out, BENCH_HEADER, rows)
    return EXIT_OK


# -- wiring -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: config value, else 0)")
    common.add_argument("--out", default=None, help="output CSV path (default: stdout)")

    p = _Parser(prog="splitonion", description="Flowlet onion-routing simulator and analysis tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run one simulation and write per-flowlet metrics")
    s.add_argument("--config", help="INI config file (default: built-in baseline)")
    s.add_argument("--trace", help="also write the observer's (link, time, length) tap trace here")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", parents=[common], help="run a parameter sweep")
    e.add_argument("kind", choices=("split-rate", "chaff-overhead", "mix-latency"))
    e.add_argument("--config", help="INI config file (default: built-in baseline)")
    e.add_argument("--reps", type=int, default=None, help="repetitions per cell (mix-latency: batches)")
    e.add_argument("--workers", type=int, default=None, help="worker processes for split-rate")
    e.set_defaults(func=cmd_experiment)

    t = sub.add_parser("analyze-topology", parents=[common], help="anonymity-set sizes for every path")
    t.add_argument("--graph", help="adjacency text file (default: the six-AS toy graph)")
    t.add_argument("--config", help=argparse.SUPPRESS)
    t.add_argument("--max-len", type=int, default=7, help="longest path, in ASes")
    t.set_defaults(func=cmd_analyze_topology)

    r = sub.add_parser("replay-size", parents=[common], help="replay detector memory for a link")
    r.add_argument("--bandwidth", type=float, default=10e9, help="link bandwidth, bit/s")
    r.add_argument("--fp", type=float, default=1e-6, help="target false-positive rate")
    r.add_argument("--ttl", type=float, default=6.0, help="packet lifetime TTL, seconds")
    r.add_argument("--avg-pkt", type=float, default=1395.0, help="average packet size, octets")
    r.set_defaults(func=cmd_replay_size)

    b = sub.add_parser("bench-codec", parents=[common], help="time codec operations on this machine")
    b.add_argument("--hops", type=int, default=7)
    b.add_argument("--payload", type=int, default=1024, help="payload length m, octets")
    b.add_argument("--iterations", type=int, default=1000)
    b.set_defaults(func=cmd_bench_codec)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "reps", None) is not None and args.reps < 1:
            raise UsageError("--reps must be >= 1")
        return args.func(args)
    except UsageError as e:
        print(f"splitonion: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"splitonion: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"splitonion: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # any other failure inside a run
        print(f"splitonion: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
