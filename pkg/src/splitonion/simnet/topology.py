"""Simulated network: nodes, directed links, and hosts attached to nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..codec import DEFAULT_PARAMS
from ..linklayer import LinkConfig
from ..replay import ReplayConfig


class ConfigError(ValueError):
    """Invalid topology or workload, reported before a run starts."""


@dataclass
class NodeSpec:
    node_id: int
    sv: bytes


@dataclass
class LinkSpec:
    link_id: int
    src: tuple  # ("node", id) or ("host", id)
    dst: tuple
    latency_ns: int = 1_000_000
    jitter_ns: int = 0
    drop: float = 0.0
    padding: Optional[LinkConfig] = None

    @property
    def max_delay_ns(self) -> int:
        return self.latency_ns + self.jitter_ns


@dataclass
class HostSpec:
    host_id: int
    node_id: int
    uplink: int = -1  # host -> node
    downlink: int = -1  # node -> host


@dataclass
class Topology:
    nodes: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    hosts: dict = field(default_factory=dict)
    replay: Optional[ReplayConfig] = None
    playout_ns: int = 0
    params: object = DEFAULT_PARAMS
    _by_ends: dict = field(default_factory=dict, repr=False)

    def add_node(self, node_id: int, sv: bytes) -> NodeSpec:
        n = self.nodes[node_id] = NodeSpec(node_id, sv)
        return n

    def add_link(self, src: tuple, dst: tuple, **kw) -> LinkSpec:
        link_id = len(self.links) + 1
        link = self.links[link_id] = LinkSpec(link_id, src, dst, **kw)
        self._by_ends[(src, dst)] = link_id
        return link

    def add_host(self, host_id: int, node_id: int, **kw) -> HostSpec:
        h = self.hosts[host_id] = HostSpec(host_id, node_id)
        h.uplink = self.add_link(("host", host_id), ("node", node_id), **kw).link_id
        h.downlink = self.add_link(("node", node_id), ("host", host_id), **kw).link_id
        return h

    def link_between(self, src: tuple, dst: tuple) -> int:
        try:
            return self._by_ends[(src, dst)]
        except KeyError:
            raise ConfigError(f"no link {src} -> {dst}") from None

    def route_links(self, src_host: int, dst_host: int, path: list) -> list:
        """(ingress, egress) link ids for every node on the path."""
        ends = [("host", src_host)] + [("node", n) for n in path] + [("host", dst_host)]
        ids = [self.link_between(a, b) for a, b in zip(ends, ends[1:])]
        return list(zip(ids, ids[1:]))

    @property
    def max_link_delay_ns(self) -> int:
        return max((l.max_delay_ns for l in self.links.values()), default=0)

    def validate(self) -> None:
        for l in self.links.values():
            for kind, ident in (l.src, l.dst):
                table = self.nodes if kind == "node" else self.hosts
                if ident not in table:
                    raise ConfigError(f"link {l.link_id} references missing {kind} {ident}")
            if not 0 <= l.drop <= 1:
                raise ConfigError(f"link {l.link_id} drop probability {l.drop}")
            if l.latency_ns < 0 or l.jitter_ns < 0:
                raise ConfigError(f"link {l.link_id} has negative delay")
        for h in self.hosts.values():
            if h.node_id not in self.nodes:
                raise ConfigError(f"host {h.host_id} attached to missing node {h.node_id}")
        if self.playout_ns < self.max_jitter_ns:
            raise ConfigError("playout delay must cover the largest link jitter")

    @property
    def max_jitter_ns(self) -> int:
        return max((l.jitter_ns for l in self.links.values()), default=0)

    def shortest_path(self, a: int, b: int) -> list:
        """Node path between two nodes by breadth-first search."""
        adj = {}
        for l in self.links.values():
            if l.src[0] == "node" and l.dst[0] == "node":
                adj.setdefault(l.src[1], []).append(l.dst[1])
        prev, frontier = {a: None}, [a]
        while frontier and b not in prev:
            nxt = []
            for u in frontier:
                for v in sorted(adj.get(u, ())):
                    if v not in prev:
                        prev[v] = u
                        nxt.append(v)
            frontier = nxt
        if b not in prev:
            raise ConfigError(f"no path from node {a} to node {b}")
        out = [b]
        while out[-1] != a:
            out.append(prev[out[-1]])
        return out[::-1]


def line_topology(n_nodes: int, seed: int = 0, latency_ns: int = 5_000_000, jitter_ns: int = 0,
                  drop: float = 0.0, access_drop: float = 0.0, replay: Optional[ReplayConfig] = None,
                  playout_ns: Optional[int] = None, padding_rate: Optional[float] = None,
                  params=DEFAULT_PARAMS) -> Topology:
    """Nodes 0..n-1 in a line, both directions linked, one host per node (host id = node id).

    Loss applies to node-to-node links; access links use `access_drop`.
    With `padding_rate`, every node-to-node link carries padded link frames.
    """
    rng = np.random.default_rng([seed, 0xA11CE])
    topo = Topology(replay=replay, params=params,
                    playout_ns=jitter_ns if playout_ns is None else playout_ns)
    for i in range(n_nodes):
        topo.add_node(i, rng.bytes(16))
    for i in range(n_nodes - 1):
        for a, b in ((i, i + 1), (i + 1, i)):
            pad = None
            if padding_rate:
                pad = LinkConfig(rng.bytes(16), padding_rate, body_len=params.packet_len)
            topo.add_link(("node", a), ("node", b), latency_ns=latency_ns,
                          jitter_ns=jitter_ns, drop=drop, padding=pad)
    for i in range(n_nodes):
        topo.add_host(i, i, latency_ns=latency_ns, jitter_ns=jitter_ns, drop=access_drop)
    return topo
