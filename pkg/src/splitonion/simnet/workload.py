"""Synthetic flow traces and their conversion into flowlets.

The flow generator stands in for a backbone packet trace: heavy-tailed flow
sizes, log-normal rates, and a small-flow filter.  A flow of rate R and
duration D becomes ceil(D/T) batches of ceil(R/B) simultaneous flowlets,
with its packets dealt round-robin across the flowlets of each batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NS_PER_S = 1_000_000_000
_EPS = 1e-9


@dataclass(frozen=True)
class FlowProfile:
    flows: int = 100
    span_s: float = 30.0  # flow start times are uniform over [0, span_s)
    # sizes in packets: Pareto tail above size_min_raw, then filtered
    size_alpha: float = 1.1
    size_min_raw: float = 1.0
    # UDP flows (mostly short request/response) use a steeper tail
    udp_fraction: float = 0.2
    udp_size_alpha: float = 1.6
    rate_median_pps: float = 10.0
    rate_sigma: float = 1.0
    min_size: int = 10  # packets
    min_rate_pps: float = 1.0 / 1395  # one octet per second
    max_size: int = 100_000
    # path length distribution on a line of n_nodes nodes
    path_lengths: tuple = ((2, 0.10), (3, 0.20), (4, 0.30), (5, 0.22), (6, 0.12), (7, 0.06))
    n_nodes: int = 7

    def __post_init__(self):
        if self.flows < 0:
            raise ValueError("flows must be >= 0")
        if self.size_alpha <= 0 or self.udp_size_alpha <= 0 or self.rate_sigma < 0:
            raise ValueError("distribution parameters must be positive")
        total = sum(p for _, p in self.path_lengths)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError("path length probabilities must sum to 1")
        if max(l for l, _ in self.path_lengths) > self.n_nodes:
            raise ValueError("path longer than the node line")


@dataclass(frozen=True)
class Flow:
    flow_id: int
    src: int  # host ids
    dst: int
    path: tuple  # node ids
    start_ns: int
    size: int  # packets
    rate_pps: float
    cls: str = "tcp"

    @property
    def duration_s(self) -> float:
        return self.size / self.rate_pps


@dataclass(frozen=True)
class FlowletSpec:
    flowlet_id: int
    flow_id: int
    src: int
    dst: int
    path: tuple
    start_ns: int
    data_ns: tuple  # data packet arrival offsets from start_ns
    batch: int = 0
    cls: str = "tcp"


@dataclass
class Workload:
    flowlets: list = field(default_factory=list)
    flows: list = field(default_factory=list)
    filtered: int = 0

    def __len__(self):
        return len(self.flowlets)

    @property
    def data_packets(self) -> int:
        return sum(len(f.data_ns) for f in self.flowlets)


def _draw_path(profile: FlowProfile, rng) -> tuple:
    lengths = np.array([l for l, _ in profile.path_lengths])
    probs = np.array([p for _, p in profile.path_lengths])
    n = int(rng.choice(lengths, p=probs))
    first = int(rng.integers(0, profile.n_nodes - n + 1))
    path = list(range(first, first + n))
    if rng.random() < 0.5:
        path.reverse()
    return tuple(path)


def synth_flows(profile: FlowProfile, seed: int) -> tuple:
    """Draw flows and drop the small ones.  Returns (flows, filtered_count)."""
    rng = np.random.default_rng([seed, 0xF10])
    flows, filtered = [], 0
    for i in range(profile.flows):
        udp = rng.random() < profile.udp_fraction
        alpha = profile.udp_size_alpha if udp else profile.size_alpha
        size = int(min(profile.size_min_raw * (1.0 + rng.pareto(alpha)), profile.max_size))
        rate = float(profile.rate_median_pps * math.exp(profile.rate_sigma * rng.standard_normal()))
        start = int(rng.integers(0, max(1, int(profile.span_s * NS_PER_S))))
        path = _draw_path(profile, rng)
        if size < profile.min_size or rate < profile.min_rate_pps:
            filtered += 1
            continue
        flows.append(Flow(i, path[0], path[-1], path, start, size, rate, "udp" if udp else "tcp"))
    return flows, filtered


def flowletize(flows, rate_B: float, lifetime_T: float) -> list:
    """Split flows into flowlets of rate <= rate_B (pkt/s) and lifetime <= lifetime_T (s)."""
    T_ns = round(lifetime_T * NS_PER_S)
    slot_ns = round(NS_PER_S / rate_B)
    out = []
    for f in flows:
        n_par = max(1, math.ceil(f.rate_pps / rate_B - _EPS))
        times = [round(j * NS_PER_S / f.rate_pps) for j in range(f.size)]
        lanes = [[] for _ in range(n_par)]  # per lane: list of flowlets, each a list of send times
        for j, t in enumerate(times):
            lane = lanes[j % n_par]
            # a flowlet opens at its first packet; a packet whose slot would fall past
            # the lifetime opens the next one
            if not lane or -(-(t - lane[-1][0]) // slot_ns) * slot_ns >= T_ns:
                lane.append([t])
            else:
                lane[-1].append(t)
        batches = sorted((data[0], b, data) for lane in lanes for b, data in enumerate(lane))
        for first, b, data in batches:
            out.append(FlowletSpec(len(out), f.flow_id, f.src, f.dst, f.path, f.start_ns + first,
                                   tuple(t - first for t in data), b, f.cls))
    return out


def synth_workload(profile: FlowProfile, rate_B: float, lifetime_T: float, seed: int) -> Workload:
    flows, filtered = synth_flows(profile, seed)
    return Workload(flowletize(flows, rate_B, lifetime_T), flows, filtered)


def kbps_to_pps(kbps: float, packet_len: int) -> float:
    return kbps * 1000.0 / (8 * packet_len)
