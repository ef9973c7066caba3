"""Parameter sweeps: split rate vs. success, chaff overhead vs. B, mixing latency."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..mixer import expected_batch_latency, expected_message_delay, simulate_mix_latency
from ..replay import ReplayConfig
from ..shaping import (FlowletConfig, FlowletTerminated, PacketKind, SenderFlowlet, sender_emit,
                       sender_shutdown, uniform_split)
from .sim import SimConfig, run_simulation
from .topology import line_topology
from .workload import FlowProfile, flowletize, kbps_to_pps, synth_flows, synth_workload

SPLIT_RATE_HEADER = ("drop_rate", "split_rate", "H", "success_rate", "ci95")
CHAFF_OVERHEAD_HEADER = ("B", "overhead_ratio", "flow_class")
MIX_LATENCY_HEADER = ("batch_size", "rate", "mean_delay_ms", "ci95_ms", "batch_fill_ms", "formula_ms")


@dataclass(frozen=True)
class NetworkSpec:
    n_nodes: int = 7
    latency_ns: int = 5_000_000
    jitter_ns: int = 1_000_000
    access_drop: float = 0.0
    padding_rate: float = 0.0  # link frames per second; 0 disables link padding
    replay: ReplayConfig = None
    playout_ns: int = None  # None means the largest jitter

    def build(self, drop: float, seed: int, params=None):
        kw = {} if params is None else {"params": params}
        return line_topology(self.n_nodes, seed=seed, latency_ns=self.latency_ns, jitter_ns=self.jitter_ns,
                             drop=drop, access_drop=self.access_drop, replay=self.replay, playout_ns=self.playout_ns,
                             padding_rate=self.padding_rate or None, **kw)


@dataclass(frozen=True)
class SplitRateGrid:
    drop_rates: tuple = (0.002, 0.05, 0.1)
    split_rates: tuple = (0.0, 0.02, 0.05)
    H_values: tuple = (1, 2, 4)
    reps: int = 30
    rate_B: float = kbps_to_pps(10, 1395)  # pkt/s
    lifetime_T: float = 60.0
    chaff_cap_Lchf: int = 3
    pad_max: int = 0
    failure_mode: str = "consecutive"
    profile: FlowProfile = field(default_factory=lambda: FlowProfile(flows=300))
    network: NetworkSpec = field(default_factory=NetworkSpec)
    engine: str = "token"

    def __post_init__(self):
        if not (self.drop_rates and self.split_rates and self.H_values):
            raise ValueError("grid must be non-empty")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")


def mean_ci95(values) -> tuple:
    """Mean and half-width of a Student-t 95% confidence interval."""
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    half = stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return float(x.mean()), float(half)


def _split_cell(args) -> float:
    grid, drop, split, H, seed = args
    n = grid.network.n_nodes
    fc = FlowletConfig(grid.rate_B, grid.lifetime_T, H, grid.chaff_cap_Lchf,
                       uniform_split(split, n), grid.pad_max, grid.failure_mode)
    cfg = SimConfig(fc, engine=grid.engine, record_departures=False, record_taps=False)
    topo = grid.network.build(drop, seed)
    wl = synth_workload(grid.profile, grid.rate_B, grid.lifetime_T, seed)
    metrics, _ = run_simulation(topo, wl, seed, cfg)
    return metrics.success_rate


def _pmap(fn, jobs, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, jobs, chunksize=4))
    return [fn(j) for j in jobs]


def experiment_split_rate(grid: SplitRateGrid, seed: int = 0, workers: int = 0) -> list:
    """One row per (drop, split, H) cell: mean success rate over reps and its 95% CI.

    Rep i of every cell uses seed (seed, i), so cells are paired.
    """
    cells = list(itertools.product(grid.drop_rates, grid.split_rates, grid.H_values))
    jobs = [(grid, d, s, h, seed * 100_003 + r) for d, s, h in cells for r in range(grid.reps)]
    results = _pmap(_split_cell, jobs, workers)
    rows = []
    for i, (d, s, h) in enumerate(cells):
        mean, ci = mean_ci95(results[i * grid.reps:(i + 1) * grid.reps])
        rows.append({"drop_rate": d, "split_rate": s, "H": h, "success_rate": mean, "ci95": ci})
    return rows


class _CountingBuilder:
    def data(self, payload, now):
        return None

    def chaff(self, now):
        return None

    def splittable(self, hop, now):
        return None


def emulate_sender(spec, config: FlowletConfig, rng, early_shutdown: bool = True) -> dict:
    """Run one flowlet's sender slot loop without a network; returns packet counts by kind."""
    fl = SenderFlowlet(config, len(spec.path), _CountingBuilder(), start_ns=0)
    pending = list(spec.data_ns)
    while True:
        now = fl.next_slot_ns
        while pending and pending[0] <= now:
            fl.data_queue.append(pending.pop(0))
        try:
            em = sender_emit(fl, now, rng)
        except FlowletTerminated:
            break
        if (early_shutdown and fl.pad_remaining is None and not pending and not fl.data_queue
                and em.kind is PacketKind.DATA):
            sender_shutdown(fl, rng)
        if fl.stopped:
            break
    return fl.counts


def experiment_chaff_overhead(flows, B_values, lifetime_T: float = 60.0, seed: int = 0,
                              pad_max: int = 0, split: float = 0.0, early_shutdown: bool = True) -> list:
    """Chaff per data packet for each flowlet rate B (pkt/s), overall and per flow class."""
    if not flows:
        raise ValueError("workload is empty")
    rows = []
    for B in B_values:
        chaff, data = {}, {}
        fc_cache = {}
        for spec in flowletize(flows, B, lifetime_T):
            n = len(spec.path)
            if n not in fc_cache:
                fc_cache[n] = FlowletConfig(B, lifetime_T, split_prob=uniform_split(split, n), pad_max=pad_max)
            rng = np.random.default_rng([seed, 7, spec.flowlet_id])
            c = emulate_sender(spec, fc_cache[n], rng, early_shutdown)
            for cls in ("all", spec.cls):
                chaff[cls] = chaff.get(cls, 0) + c[PacketKind.CHAFF] + c[PacketKind.SPLIT]
                data[cls] = data.get(cls, 0) + c[PacketKind.DATA]
        for cls in ("all", "tcp", "udp"):
            if data.get(cls):
                rows.append({"B": B, "overhead_ratio": chaff[cls] / data[cls], "flow_class": cls})
    return rows


def experiment_mix_latency(batch_sizes, rate: float, n_batches: int = 2000, seed: int = 0) -> list:
    """Per-hop mixing delay under Poisson setup arrivals at `rate` messages per second."""
    rows = []
    for m in batch_sizes:
        rng = np.random.default_rng([seed, 9, m])
        out = simulate_mix_latency(m, rate, n_batches, rng)
        # per-batch means are independent; per-message delays within a batch are not
        per_batch = out["message_delay"].reshape(n_batches, m).mean(axis=1)
        mean, ci = mean_ci95(per_batch)
        rows.append({
            "batch_size": m,
            "rate": rate,
            "mean_delay_ms": mean * 1e3,
            "ci95_ms": ci * 1e3,
            "batch_fill_ms": float(out["batch_fill"].mean()) * 1e3,
            "formula_ms": expected_batch_latency(m, rate) * 1e3,
        })
    return rows


def mix_latency_reference(batch_size: int, rate: float) -> dict:
    return {
        "message_delay_s": expected_message_delay(batch_size, rate),
        "batch_fill_s": (batch_size - 1) / rate,
        "formula_s": expected_batch_latency(batch_size, rate),
    }


def default_overhead_flows(seed: int, flows: int = 2000):
    return synth_flows(FlowProfile(flows=flows), seed)[0]
